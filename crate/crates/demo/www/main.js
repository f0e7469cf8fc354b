import init, { grf_field, gate_curve, NoiseFit } from "./pkg/napinn_demo.js";

const $ = (id) => document.getElementById(id);

function diverging(v) {
  // blue - white - red on [-3, 3]
  const t = Math.max(-1, Math.min(1, v / 3));
  const a = Math.round(255 * (1 - Math.abs(t)));
  return t < 0 ? [a, a, 255] : [255, a, a];
}

function drawGrf() {
  const n = 64;
  const alpha = parseFloat($("alpha").value);
  $("alpha-val").textContent = alpha.toFixed(1);
  const field = grf_field(n, alpha, parseInt($("grf-seed").value, 10) >>> 0);
  const canvas = $("grf");
  const ctx = canvas.getContext("2d");
  const img = ctx.createImageData(n, n);
  for (let i = 0; i < n * n; i++) {
    const [r, g, b] = diverging(field[i]);
    img.data.set([r, g, b, 255], 4 * i);
  }
  const tmp = new OffscreenCanvas(n, n);
  tmp.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(tmp, 0, 0, canvas.width, canvas.height);
}

function plot(canvas, xs, series, xRange, yMax) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const pad = 30;
  ctx.clearRect(0, 0, w, h);
  const sx = (x) => pad + ((x - xRange[0]) / (xRange[1] - xRange[0])) * (w - 2 * pad);
  const sy = (y) => h - pad - (y / yMax) * (h - 2 * pad);
  ctx.strokeStyle = "#888";
  ctx.beginPath();
  ctx.moveTo(pad, h - pad);
  ctx.lineTo(w - pad, h - pad);
  ctx.moveTo(pad, h - pad);
  ctx.lineTo(pad, pad);
  ctx.stroke();
  ctx.fillStyle = "#555";
  ctx.fillText(xRange[0].toFixed(0), pad - 4, h - pad + 14);
  ctx.fillText(xRange[1].toFixed(0), w - pad - 8, h - pad + 14);
  ctx.fillText(yMax.toFixed(2), 2, pad);
  for (const { ys, color } of series) {
    ctx.strokeStyle = color;
    ctx.lineWidth = 2;
    ctx.beginPath();
    xs.forEach((x, i) => (i ? ctx.lineTo(sx(x), sy(ys[i])) : ctx.moveTo(sx(x), sy(ys[i]))));
    ctx.stroke();
  }
  return { sx, sy, pad };
}

let fit = null;
let running = false;
let probes = null;

function resetFit() {
  const samples = Math.max(10, parseInt($("fit-samples").value, 10) || 5000);
  fit = new NoiseFit(samples, 256, 3e-3, 7);
  const inliers = fit.sample(200, 11);
  const mean = inliers.reduce((s, v) => s + v, 0) / inliers.length;
  const std = Math.sqrt(inliers.reduce((s, v) => s + (v - mean) ** 2, 0) / (inliers.length - 1));
  const outliers = fit.sample(40, 12).map((v) => v + std * (3 + 7 * Math.random()));
  probes = { inliers, outliers };
  drawFit();
}

function drawFit() {
  const xs = Array.from(fit.grid());
  const truth = Array.from(fit.truth());
  const learned = Array.from(fit.learned());
  const yMax = 1.1 * Math.max(...truth, ...learned);
  plot($("density"), xs, [
    { ys: truth, color: "#999" },
    { ys: learned, color: "#c33" },
  ], [xs[0], xs[xs.length - 1]], yMax);
  $("fit-readout").textContent =
    `steps ${fit.steps}  KL ${fit.kl().toFixed(3)} nats  maxima ${fit.modes()}  sigma_run ${fit.sigma_run.toFixed(3)}`;
  drawGate();
}

function drawGate() {
  const a = 10 ** parseFloat($("gate-a").value);
  const tau = parseFloat($("gate-tau").value);
  $("a-val").textContent = a.toFixed(2);
  $("tau-val").textContent = tau.toFixed(1);
  const lo = -1, hi = 20;
  const es = Array.from({ length: 300 }, (_, i) => lo + ((hi - lo) * i) / 299);
  const g = Array.from(gate_curve(a, tau, Float64Array.from(es)));
  const canvas = $("gate");
  const { sx, pad } = plot(canvas, es, [{ ys: g, color: "#226" }], [lo, hi], 1.05);
  if (!fit) return;
  const ctx = canvas.getContext("2d");
  const h = canvas.height;
  let kept = 0, rejected = 0;
  for (const [raw, color, row] of [[probes.inliers, "#36c", 0], [probes.outliers, "#c33", 1]]) {
    const e = fit.energies(Float64Array.from(raw));
    const w = gate_curve(a, tau, e);
    ctx.strokeStyle = color;
    ctx.beginPath();
    e.forEach((v, i) => {
      const x = sx(Math.max(lo, Math.min(hi, v)));
      ctx.moveTo(x, h - pad + 18 + 6 * row);
      ctx.lineTo(x, h - pad + 23 + 6 * row);
      if (row === 0 && w[i] >= 0.5) kept++;
      if (row === 1 && w[i] < 0.5) rejected++;
    });
    ctx.stroke();
  }
  $("gate-readout").textContent =
    `inliers kept ${kept}/${probes.inliers.length}  outliers rejected ${rejected}/${probes.outliers.length}`;
}

function loop() {
  if (!running) return;
  fit.train(20);
  drawFit();
  requestAnimationFrame(loop);
}

await init();
$("status").textContent = "";
drawGrf();
resetFit();
$("alpha").addEventListener("input", drawGrf);
$("grf-seed").addEventListener("change", drawGrf);
$("fit-step").addEventListener("click", () => { fit.train(100); drawFit(); });
$("fit-run").addEventListener("click", () => {
  running = !running;
  $("fit-run").textContent = running ? "pause" : "run";
  loop();
});
$("fit-reset").addEventListener("click", resetFit);
$("gate-a").addEventListener("input", drawGate);
$("gate-tau").addEventListener("input", drawGate);
