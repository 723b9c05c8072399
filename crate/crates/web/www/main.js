import init, { Demo } from "./pkg/patchsim_web.js";

const $ = (id) => document.getElementById(id);

function draw(canvas, demo, pixels) {
  canvas.width = demo.width;
  canvas.height = demo.height;
  const img = new ImageData(new Uint8ClampedArray(pixels), demo.width, demo.height);
  canvas.getContext("2d").putImageData(img, 0, 0);
}

function guarded(out, f) {
  return () => {
    try {
      f();
    } catch (e) {
      out.textContent = String(e);
    }
  };
}

await init();
const demo = new Demo(320, 240);

const renderView = guarded($("r-frame-v"), () => {
  $("r-frame-v").textContent = $("r-frame").value;
  const px = demo.render(Number($("r-frame").value), $("r-weather").value, $("r-layer").value);
  draw($("r-canvas"), demo, px);
});
for (const id of ["r-frame", "r-weather", "r-layer"]) $(id).addEventListener("input", renderView);

const patchView = guarded($("p-out"), () => {
  const px = demo.patch(0, $("p-weather").value, $("p-method").value);
  draw($("p-canvas"), demo, px);
  $("p-out").textContent = `distance to rendered patch: ${demo.distance.toFixed(1)} / 255`;
});
for (const id of ["p-method", "p-weather"]) $(id).addEventListener("input", patchView);

$("a-run").addEventListener("click", guarded($("a-out"), () => {
  $("a-out").textContent = "working…";
  setTimeout(guarded($("a-out"), () => {
    const px = demo.ablate($("a-jitter").checked, Number($("a-window").value));
    draw($("a-canvas"), demo, px);
    $("a-out").textContent = `patch pixels removed: ${(100 * demo.removal_rate).toFixed(1)}%`;
  }), 0);
}));

renderView();
patchView();
