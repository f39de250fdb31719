// Before/after comparison: the restored image sits on top of the degraded
// one and a slider clips it from the left, so the handle position is the
// boundary between "before" (left) and "after" (right).

export function createCompare(lqB64: string, restoredB64: string): HTMLElement {
  const wrap = document.createElement("div");
  wrap.className = "compare";

  const before = document.createElement("img");
  before.className = "compare-before";
  before.alt = "degraded input";
  before.src = `data:image/png;base64,${lqB64}`;

  const after = document.createElement("img");
  after.className = "compare-after";
  after.alt = "restored output";
  after.src = `data:image/png;base64,${restoredB64}`;

  const slider = document.createElement("input");
  slider.type = "range";
  slider.min = "0";
  slider.max = "100";
  slider.value = "50";
  slider.className = "compare-slider";
  slider.setAttribute("aria-label", "before/after position");

  const apply = () => {
    after.style.clipPath = `inset(0 0 0 ${slider.value}%)`;
  };
  slider.addEventListener("input", apply);
  apply();

  wrap.append(before, after, slider);
  return wrap;
}
