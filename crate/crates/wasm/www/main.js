import init, { kernel_curve, enhance_image, synthetic_image, loss_vs_blur } from "./pkg/decloss_wasm.js";

const SIZE = 96;
const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
let pixels = null;

function report(err) {
  $("status").textContent = err ? String(err.message ?? err) : "";
}

function bind(ids, fn) {
  for (const id of ids) {
    const el = $(id);
    const shown = $(id + "-v");
    const update = () => {
      if (shown) shown.textContent = el.value;
      try { fn(); report(null); } catch (e) { report(e); }
    };
    el.addEventListener("input", update);
    if (shown) shown.textContent = el.value;
  }
}

function plot(canvas, xs, ys, label) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const pad = 30;
  ctx.clearRect(0, 0, w, h);
  const finite = ys.filter(Number.isFinite);
  if (!finite.length) return;
  let lo = Math.min(0, ...finite), hi = Math.max(...finite);
  if (hi === lo) hi = lo + 1;
  const x0 = xs[0], x1 = xs[xs.length - 1] === x0 ? x0 + 1 : xs[xs.length - 1];
  const px = (x) => pad + ((x - x0) / (x1 - x0)) * (w - 2 * pad);
  const py = (y) => h - pad - ((y - lo) / (hi - lo)) * (h - 2 * pad);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.fillStyle = "#333";
  ctx.fillText(hi.toFixed(3), 2, pad + 4);
  ctx.fillText(lo.toFixed(3), 2, h - pad);
  ctx.fillText(label, w - pad - ctx.measureText(label).width, h - 8);
  ctx.strokeStyle = "#1565c0";
  ctx.beginPath();
  let open = false;
  xs.forEach((x, i) => {
    if (!Number.isFinite(ys[i])) { open = false; return; }
    open ? ctx.lineTo(px(x), py(ys[i])) : ctx.moveTo(px(x), py(ys[i]));
    open = true;
  });
  ctx.stroke();
  ctx.fillStyle = "#1565c0";
  xs.forEach((x, i) => Number.isFinite(ys[i]) && ctx.fillRect(px(x) - 2, py(ys[i]) - 2, 4, 4));
}

function draw(canvas, rgba) {
  canvas.getContext("2d").putImageData(new ImageData(new Uint8ClampedArray(rgba), SIZE, SIZE), 0, 0);
}

function drawKernel() {
  const n = num("k-n");
  const k = kernel_curve(n, num("k-alpha"), num("k-mu"));
  plot($("k-plot"), [...k.keys()], Array.from(k), "index");
}

function drawEnhanced() {
  if (!pixels) return;
  draw($("e-src"), pixels);
  draw($("e-out"), enhance_image(pixels, SIZE, SIZE, num("e-alpha"), num("e-mu"), num("e-gain")));
}

function loadSynthetic() {
  pixels = synthetic_image(SIZE, BigInt(Math.max(0, Math.floor(num("e-seed")))));
  drawEnhanced();
}

async function loadFile(file) {
  const bmp = await createImageBitmap(file);
  const side = Math.min(bmp.width, bmp.height);
  const c = new OffscreenCanvas(SIZE, SIZE);
  const ctx = c.getContext("2d");
  ctx.drawImage(bmp, (bmp.width - side) / 2, (bmp.height - side) / 2, side, side, 0, 0, SIZE, SIZE);
  pixels = new Uint8Array(ctx.getImageData(0, 0, SIZE, SIZE).data.buffer);
  drawEnhanced();
}

function drawBlur() {
  if (!pixels) return;
  const sigmas = Float64Array.from({ length: 13 }, (_, i) => i * 0.25);
  const loss = loss_vs_blur(pixels, SIZE, SIZE, num("b-patch"), sigmas);
  plot($("b-plot"), Array.from(sigmas), Array.from(loss), "sigma");
}

await init();
bind(["k-n", "k-alpha", "k-mu"], drawKernel);
bind(["e-alpha", "e-mu", "e-gain"], drawEnhanced);
bind(["e-seed"], loadSynthetic);
$("e-file").addEventListener("change", (ev) => {
  const f = ev.target.files[0];
  if (f) loadFile(f).then(() => report(null), report);
});
$("b-run").addEventListener("click", () => {
  try { drawBlur(); report(null); } catch (e) { report(e); }
});
try {
  drawKernel();
  loadSynthetic();
  drawBlur();
} catch (e) {
  report(e);
}
