import init, { loss_curves, noise_demo, train_blobs } from "./pkg/normloss_web.js";

const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];
const $ = (id) => document.getElementById(id);

function call(fn, errId, ...args) {
  const out = JSON.parse(fn(...args));
  $(errId).textContent = out && out.error ? out.error : "";
  return out && out.error ? null : out;
}

function legend(id, names) {
  $(id).innerHTML = names
    .map((n, i) => `<span><i style="background:${COLORS[i % COLORS.length]}"></i>${n}</span>`)
    .join("");
}

function linePlot(canvas, xs, series, { yMin, yMax, logY = false } = {}) {
  const ctx = canvas.getContext("2d");
  const W = canvas.width, H = canvas.height, L = 50, B = 24, T = 8, R = 10;
  ctx.clearRect(0, 0, W, H);
  const tf = logY ? (v) => Math.log10(Math.max(v, 1e-12)) : (v) => v;
  const all = series.flat().filter(Number.isFinite).map(tf);
  let lo = yMin ?? Math.min(...all), hi = yMax ?? Math.max(...all);
  if (hi - lo < 1e-9) { lo -= 0.5; hi += 0.5; }
  const x0 = xs[0], x1 = xs[xs.length - 1];
  const px = (x) => L + ((x - x0) / (x1 - x0 || 1)) * (W - L - R);
  const py = (y) => T + (1 - (tf(y) - lo) / (hi - lo)) * (H - T - B);
  ctx.strokeStyle = "#999"; ctx.fillStyle = "#444"; ctx.font = "11px sans-serif";
  ctx.beginPath(); ctx.moveTo(L, T); ctx.lineTo(L, H - B); ctx.lineTo(W - R, H - B); ctx.stroke();
  for (let i = 0; i <= 4; i++) {
    const v = lo + (i / 4) * (hi - lo);
    const y = T + (1 - i / 4) * (H - T - B);
    ctx.fillText(logY ? `1e${v.toFixed(1)}` : v.toPrecision(3), 2, y + 4);
    const xv = x0 + (i / 4) * (x1 - x0);
    ctx.fillText(Number.isInteger(xv) ? xv : xv.toFixed(2), px(xv) - 8, H - 6);
  }
  series.forEach((ys, i) => {
    ctx.strokeStyle = COLORS[i % COLORS.length]; ctx.lineWidth = 2; ctx.beginPath();
    let started = false;
    ys.forEach((y, j) => {
      if (!Number.isFinite(y)) return;
      const X = px(xs[j]), Y = Math.min(Math.max(py(y), T), H - B);
      started ? ctx.lineTo(X, Y) : ctx.moveTo(X, Y);
      started = true;
    });
    ctx.stroke();
  });
}

function heatmap(canvas, m) {
  const ctx = canvas.getContext("2d");
  const k = m.length, s = canvas.width / k;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.font = `${Math.max(8, Math.min(12, s / 3.5))}px sans-serif`;
  m.forEach((row, i) => row.forEach((v, j) => {
    const shade = Math.round(255 * (1 - Math.sqrt(v)));
    ctx.fillStyle = `rgb(${shade},${shade},255)`;
    ctx.fillRect(j * s, i * s, s - 1, s - 1);
    if (k <= 12) {
      ctx.fillStyle = v > 0.35 ? "#fff" : "#000";
      ctx.fillText(v.toFixed(2), j * s + 2, i * s + s / 2 + 4);
    }
  }));
}

function drawCurves() {
  const out = call(loss_curves, "c-err", $("c-losses").value, Number($("c-k").value), 400);
  if (!out) return;
  const what = $("c-what").value;
  linePlot($("c-plot"), out.p, out.series.map((s) => s[what]), { logY: what === "grad" });
  legend("c-legend", out.series.map((s) => s.loss));
}

function drawNoise() {
  const out = call(noise_demo, "n-err", $("n-spec").value, Number($("n-k").value), Number($("n-n").value),
    $("n-mode").value, $("n-losses").value, Number($("n-seed").value));
  if (!out) return;
  heatmap($("n-true"), out.transition);
  heatmap($("n-emp"), out.empirical);
  $("n-rate").textContent = `${out.noise}: realized flip rate ${out.realized_rate.toFixed(4)}`;
  $("n-table").innerHTML = out.risks.length
    ? "<tr><th>loss</th><th>clean R</th><th>noisy R</th><th>identity</th><th>residual</th></tr>" +
      out.risks.map((r) => `<tr><td style="text-align:left">${r.loss}</td><td>${r.clean.toFixed(4)}</td>` +
        `<td>${r.noisy.toFixed(4)}</td><td>${r.predicted.toFixed(4)}</td><td>${r.residual.toExponential(1)}</td></tr>`).join("")
    : "";
}

function runTraining() {
  $("t-run").disabled = true;
  $("t-run").textContent = "training…";
  // let the button repaint before the synchronous wasm call
  setTimeout(() => {
    const out = call(train_blobs, "t-err", $("t-losses").value, Number($("t-k").value),
      Number($("t-eta").value), Number($("t-epochs").value), Number($("t-seed").value));
    $("t-run").disabled = false;
    $("t-run").textContent = "train";
    if (!out) return;
    const epochs = out[0].test_acc.map((_, i) => i + 1);
    linePlot($("t-plot"), epochs, out.map((c) => c.test_acc), { yMin: 0, yMax: 1 });
    legend("t-legend", out.map((c) => c.loss));
  }, 20);
}

await init();
for (const id of ["c-losses", "c-k", "c-what"]) $(id).addEventListener("input", drawCurves);
for (const id of ["n-spec", "n-k", "n-n", "n-mode", "n-losses", "n-seed"]) $(id).addEventListener("input", drawNoise);
$("t-eta").addEventListener("input", () => ($("t-eta-v").textContent = $("t-eta").value));
$("t-run").addEventListener("click", runTraining);
$("t-eta-v").textContent = $("t-eta").value;
drawCurves();
drawNoise();
runTraining();
