import init, { Demo } from "./pkg/transcal_wasm.js";

const $ = (id) => document.getElementById(id);
let demo = null;

function status(text) {
  $("status").textContent = text;
}

// Runs `work` after the status line has painted.
function busy(text, work) {
  status(text);
  setTimeout(() => {
    try {
      work();
      status("");
    } catch (e) {
      status(`error: ${e}`);
    }
  }, 20);
}

function drawReliability(canvas, side, title) {
  const g = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const pad = 30, size = w - 2 * pad;
  g.clearRect(0, 0, w, h);
  g.strokeStyle = "#999";
  g.strokeRect(pad, pad, size, size);
  g.beginPath();
  g.moveTo(pad, pad + size);
  g.lineTo(pad + size, pad);
  g.setLineDash([4, 4]);
  g.stroke();
  g.setLineDash([]);
  for (const b of side.bins) {
    if (b.accuracy === null) continue;
    const x = pad + b.lower * size, bw = (b.upper - b.lower) * size;
    const y = pad + (1 - b.accuracy) * size;
    g.fillStyle = "rgba(40, 100, 200, 0.7)";
    g.fillRect(x, y, bw - 1, pad + size - y);
    const cy = pad + (1 - b.confidence) * size;
    g.fillStyle = "#c33";
    g.fillRect(x, cy - 1, bw - 1, 2);
  }
  g.fillStyle = "#222";
  g.fillText(`${title}  ECE ${side.metrics.ece.toFixed(4)}`, pad, pad - 10);
  g.fillText("confidence", pad + size / 2 - 25, h - 8);
}

function color(v) {
  // Dark for small values.
  const c = Math.round(255 * Math.min(1, Math.max(0, v)));
  return `rgb(${c}, ${Math.round(c * 0.8)}, ${255 - c})`;
}

function drawHeatmap(view) {
  const canvas = $("heatmap"), g = canvas.getContext("2d");
  const nt = view.temperatures.length, nl = view.lambdas.length;
  const pad = 40, cw = (canvas.width - 2 * pad) / nt, ch = (canvas.height - 2 * pad) / nl;
  const finite = view.values.filter(Number.isFinite);
  const lo = Math.min(...finite), hi = Math.max(...finite);
  g.clearRect(0, 0, canvas.width, canvas.height);
  for (let i = 0; i < nt; i++) {
    for (let j = 0; j < nl; j++) {
      const v = view.values[i * nl + j];
      // Square root spreads the region near the minimum.
      g.fillStyle = Number.isFinite(v) ? color(Math.sqrt((v - lo) / (hi - lo || 1))) : "#000";
      g.fillRect(pad + i * cw, canvas.height - pad - (j + 1) * ch, cw + 0.5, ch + 0.5);
    }
  }
  const lt0 = Math.log(view.temperatures[0]), lt1 = Math.log(view.temperatures[nt - 1]);
  const px = (t) => pad + ((Math.log(t) - lt0) / (lt1 - lt0)) * (canvas.width - 2 * pad);
  const py = (l) => canvas.height - pad - l * (canvas.height - 2 * pad);
  g.strokeStyle = "#fff";
  g.beginPath();
  g.moveTo(px(view.t_true), pad);
  g.lineTo(px(view.t_true), canvas.height - pad);
  g.stroke();
  g.fillStyle = "#0c0";
  g.beginPath();
  g.arc(px(view.t_star), py(view.lambda_star), 5, 0, 2 * Math.PI);
  g.fill();
  g.fillStyle = "#222";
  g.fillText(`T (log scale, ${view.temperatures[0].toFixed(2)} to ${view.temperatures[nt - 1].toFixed(1)})`, pad, canvas.height - 12);
  g.fillText("λ", 12, canvas.height / 2);
  $("optimum").textContent =
    `optimum T* = ${view.t_star.toFixed(3)}, λ* = ${view.lambda_star.toFixed(3)} (true T = ${view.t_true}, white line)`;
}

function drawHistogram(view) {
  const canvas = $("histogram"), g = canvas.getContext("2d");
  const pad = 30, n = view.counts.length, top = Math.max(...view.counts);
  const bw = (canvas.width - 2 * pad) / n, hh = canvas.height - 2 * pad;
  g.clearRect(0, 0, canvas.width, canvas.height);
  g.fillStyle = "rgba(40, 100, 200, 0.7)";
  view.counts.forEach((c, i) => {
    const bh = top > 0 ? (Math.log1p(c) / Math.log1p(top)) * hh : 0;
    g.fillRect(pad + i * bw, pad + hh - bh, bw - 1, bh);
  });
  g.fillStyle = "#222";
  g.fillText("0", pad, canvas.height - 12);
  g.fillText(view.max_weight.toFixed(2), canvas.width - pad - 20, canvas.height - 12);
  g.fillText("count (log scale)", pad, pad - 10);
  const lines = view.renyi.map((r) =>
    `d_${r.alpha + 1} = ${r.estimated.toFixed(3)}` + (r.exact === null ? "" : `   exact ${r.exact.toFixed(3)}`));
  $("renyi").textContent =
    `max weight ${view.max_weight.toFixed(3)}, mean ${view.mean_weight.toFixed(3)}\n` + lines.join("\n");
}

function refreshWeights() {
  if (!demo) return;
  const lambda = Number($("lambda").value);
  $("lambdaValue").textContent = lambda.toFixed(2);
  drawHistogram(JSON.parse(demo.weights(lambda, 40)));
}

function generate() {
  busy("generating and estimating weights...", () => {
    if (demo) demo.free();
    demo = new Demo(
      Number($("shift").value), Number($("scale").value), Number($("ttrue").value),
      Number($("rows").value), Number($("seed").value));
    refreshWeights();
    calibrate();
  });
}

function calibrate() {
  busy("calibrating...", () => {
    const view = JSON.parse(demo.reliability($("method").value));
    drawReliability($("before"), view.before, "before");
    drawReliability($("after"), view.after, view.method);
    const params = [];
    if (view.temperature !== null) params.push(`T = ${view.temperature.toFixed(3)}`);
    if (view.lambda !== null) params.push(`λ = ${view.lambda.toFixed(3)}`);
    $("calibration").textContent =
      `${params.join(", ")}\ntarget NLL ${view.before.metrics.nll_mean.toFixed(4)} -> ${view.after.metrics.nll_mean.toFixed(4)}, ` +
      `Brier ${view.before.metrics.brier.toFixed(4)} -> ${view.after.metrics.brier.toFixed(4)}`;
  });
}

await init();
$("generate").onclick = generate;
$("calibrate").onclick = () => demo && calibrate();
$("surface").onclick = () => demo && busy("evaluating surface...", () => drawHeatmap(JSON.parse(demo.surface(30, 21))));
$("lambda").oninput = refreshWeights;
generate();
