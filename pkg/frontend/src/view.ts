// DOM rendering. Re-renders the whole app on every controller change;
// at this scale (one session, short log) that is simpler than diffing.

import { createCompare } from "./compare";
import { Instruction } from "./api";
import { LogEntry, SessionController } from "./controller";

const INSTRUCTIONS: Instruction[] = ["describe", "restore", "refine"];

function renderBanner(controller: SessionController): HTMLElement {
  const banner = document.createElement("div");
  banner.className = "banner";
  banner.setAttribute("role", "alert");
  const msg = document.createElement("span");
  msg.textContent = `Service unreachable: ${controller.state.banner}`;
  const retry = document.createElement("button");
  retry.className = "retry";
  retry.textContent = "Retry";
  retry.addEventListener("click", () => void controller.start());
  banner.append(msg, retry);
  return banner;
}

function renderToast(controller: SessionController): HTMLElement {
  const toast = document.createElement("div");
  toast.className = "toast";
  toast.setAttribute("role", "alert");
  const msg = document.createElement("span");
  msg.textContent = controller.state.toast ?? "";
  const dismiss = document.createElement("button");
  dismiss.textContent = "Dismiss";
  dismiss.addEventListener("click", () => controller.dismissToast());
  toast.append(msg, dismiss);
  return toast;
}

function renderUploader(controller: SessionController): HTMLElement {
  const box = document.createElement("div");
  box.className = "uploader";
  const prompt = document.createElement("p");
  prompt.className = "upload-prompt";
  prompt.textContent = controller.hasImage
    ? "Upload a different PNG to start over."
    : "Upload a degraded PNG to begin.";
  const input = document.createElement("input");
  input.type = "file";
  input.accept = "image/png";
  input.addEventListener("change", () => {
    const file = input.files?.[0];
    if (file === undefined) return;
    void file.arrayBuffer().then((buf) => void controller.upload(buf));
  });
  box.append(prompt, input);
  return box;
}

function renderImages(controller: SessionController): HTMLElement {
  const section = document.createElement("div");
  section.className = "images";
  const session = controller.state.session;
  if (session?.lq_b64 === undefined) return section;
  if (session.restored_b64 !== undefined) {
    section.append(createCompare(session.lq_b64, session.restored_b64));
  } else {
    const img = document.createElement("img");
    img.className = "lq-only";
    img.alt = "degraded input";
    img.src = `data:image/png;base64,${session.lq_b64}`;
    section.append(img);
  }
  return section;
}

function renderEntry(entry: LogEntry): HTMLElement {
  const li = document.createElement("li");
  li.className = `entry entry-${entry.role}`;
  const label = document.createElement("span");
  label.className = "entry-role";
  label.textContent = `${entry.role} [${entry.instruction}]`;
  const text = document.createElement("span");
  text.className = "entry-text";
  text.textContent = entry.text;
  li.append(label, text);
  if (entry.error !== undefined) {
    const err = document.createElement("span");
    err.className = "entry-error";
    err.textContent = entry.error;
    li.append(err);
  }
  return li;
}

function renderLog(controller: SessionController): HTMLElement {
  const list = document.createElement("ul");
  list.className = "log";
  for (const entry of controller.state.log) {
    list.append(renderEntry(entry));
  }
  return list;
}

function renderComposer(controller: SessionController): HTMLElement {
  const form = document.createElement("form");
  form.className = "composer";
  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    void controller.send();
  });

  const select = document.createElement("select");
  select.className = "instruction";
  for (const instr of INSTRUCTIONS) {
    const option = document.createElement("option");
    option.value = instr;
    option.textContent = instr;
    option.selected = controller.state.instruction === instr;
    select.append(option);
  }
  select.addEventListener("change", () => {
    controller.setInstruction(select.value as Instruction);
  });

  const draft = document.createElement("input");
  draft.type = "text";
  draft.className = "draft";
  draft.placeholder = "describe the degradation, or leave empty for restore";
  draft.value = controller.state.draft;
  draft.addEventListener("input", () => {
    // mutate directly: re-rendering on each keystroke would drop focus
    controller.state.draft = draft.value;
  });

  const send = document.createElement("button");
  send.type = "submit";
  send.className = "send";
  send.textContent = controller.state.inFlight ? "Working..." : "Send";
  send.disabled = !controller.canSend;

  form.append(select, draft, send);
  return form;
}

export function render(root: HTMLElement, controller: SessionController): void {
  root.textContent = "";
  const app = document.createElement("div");
  app.className = "studio";

  const title = document.createElement("h1");
  title.textContent = "Restoration Studio";
  app.append(title);

  if (controller.state.banner !== null) app.append(renderBanner(controller));
  if (controller.state.toast !== null) app.append(renderToast(controller));

  if (controller.state.phase === "ready") {
    app.append(renderUploader(controller), renderImages(controller), renderLog(controller), renderComposer(controller));
  }
  root.append(app);
}

export function mount(root: HTMLElement, controller: SessionController): void {
  controller.subscribe(() => render(root, controller));
  render(root, controller);
}
