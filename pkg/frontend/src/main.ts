import { StudioApi } from "./api";
import { SessionController } from "./controller";
import { mount } from "./view";

const root = document.getElementById("app");
if (root === null) throw new Error("missing #app mount point");

const controller = new SessionController(new StudioApi(""));
mount(root, controller);
void controller.start();
