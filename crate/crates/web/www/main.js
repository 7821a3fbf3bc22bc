import init, { exampleCurve, scalarOptimum, p2Trajectory } from "./pkg/switchlq_web.js";

const NAMES = ["A1", "B1", "C1", "D1", "Q1", "R1", "G1", "A2", "B2", "C2", "D2", "Q2", "R2", "G2", "K", "T"];
const PRESETS = {
  certificate: [1, 2, 0, 0, 1, 1, 0, 1, 1, 0, 0, 0, 1, 0.5, 1, 1],
  noisy: [0, 1, 0.3, 0, 1, 1, 0, 0, 1, 0.2, 0, 1, 1, 1, 1, 1],
  quadrature: [0, 0, 0, 0, 1, 1, 0, 0, 1, 0, 0, 0, 1, 0, 1, 1],
  identical: [0.5, 1, 0.2, 0.1, 1, 1, 0, 0.5, 1, 0.2, 0.1, 1, 1, 0.7, 1, 1],
};

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function plot(canvas, series, marker) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 48;
  ctx.clearRect(0, 0, w, h);
  const xs = series.flatMap((s) => s.x);
  const ys = series.flatMap((s) => s.y).filter(Number.isFinite);
  let [x0, x1] = [Math.min(...xs), Math.max(...xs)];
  let [y0, y1] = [Math.min(...ys), Math.max(...ys)];
  if (y1 - y0 < 1e-12) { y0 -= 0.5; y1 += 0.5; }
  const m = 0.05 * (y1 - y0);
  y0 -= m; y1 += m;
  const px = (x) => pad + ((x - x0) / (x1 - x0)) * (w - 2 * pad);
  const py = (y) => h - pad + ((y0 - y) / (y1 - y0)) * (h - 2 * pad);

  ctx.strokeStyle = "#888";
  ctx.fillStyle = "#444";
  ctx.font = "12px sans-serif";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  for (let i = 0; i <= 4; i++) {
    const xv = x0 + ((x1 - x0) * i) / 4, yv = y0 + ((y1 - y0) * i) / 4;
    ctx.fillText(xv.toFixed(2), px(xv) - 10, h - pad + 16);
    ctx.fillText(yv.toPrecision(4), 2, py(yv) + 4);
  }

  for (const s of series) {
    ctx.strokeStyle = ctx.fillStyle = s.color;
    if (s.dots) {
      s.x.forEach((x, i) => {
        ctx.beginPath();
        ctx.arc(px(x), py(s.y[i]), 2.5, 0, 2 * Math.PI);
        ctx.fill();
      });
    } else {
      ctx.beginPath();
      s.x.forEach((x, i) => (i ? ctx.lineTo(px(x), py(s.y[i])) : ctx.moveTo(px(x), py(s.y[i]))));
      ctx.lineWidth = 2;
      ctx.stroke();
      ctx.lineWidth = 1;
    }
  }
  if (marker) {
    ctx.strokeStyle = "#2ca02c";
    ctx.setLineDash([4, 4]);
    ctx.beginPath();
    ctx.moveTo(px(marker), pad);
    ctx.lineTo(px(marker), h - pad);
    ctx.stroke();
    ctx.setLineDash([]);
  }
}

function report(id, text, error) {
  $(id).textContent = text;
  $(id).className = error ? "out err" : "out";
}

function runExample() {
  try {
    const c = exampleCurve(num("ex-a"), num("ex-g"), num("ex-g1"), num("ex-T"),
      num("ex-x"), num("ex-v"), 41, num("ex-steps"));
    const r = Array.from(c.r);
    plot($("ex-plot"), [
      { x: r, y: Array.from(c.numeric), color: "#1f77b4" },
      { x: r, y: Array.from(c.closed), color: "#d62728", dots: true },
    ]);
    report("ex-out", `max |numeric - closed form| = ${c.max_error.toExponential(3)}`);
  } catch (e) {
    report("ex-out", String(e), true);
  }
}

function scalarValues() {
  return Float64Array.from(NAMES.map((n) => num(`sc-${n}`)));
}

function runScalar() {
  try {
    const res = scalarOptimum(scalarValues(), num("sc-points"), num("sc-steps"));
    plot($("sc-plot"), [{ x: Array.from(res.r), y: Array.from(res.phi), color: "#1f77b4" }], res.r_bar);
    report("sc-out", [
      `r_bar          = ${res.r_bar.toFixed(6)} (${res.classification})`,
      `phi(r_bar)     = ${res.phi_min.toFixed(8)}`,
      `dphi/dr        = ${res.sensitivity.toExponential(3)}`,
      `bracket at G2  = ${res.bracket_at_g2.toExponential(4)}`,
      `bracket at P2(0) = ${res.bracket_at_p2_0.toExponential(4)}`,
      `certificate says interior: ${res.nontrivial}`,
    ].join("\n"));
  } catch (e) {
    report("sc-out", String(e), true);
  }
}

function runTrajectory() {
  try {
    const tr = p2Trajectory(scalarValues(), 81, num("sc-steps"));
    const t = Array.from(tr.t);
    const series = [{ x: t, y: Array.from(tr.numeric), color: "#1f77b4" }];
    const closed = Array.from(tr.closed);
    if (closed.length) series.push({ x: t, y: closed, color: "#d62728", dots: true });
    plot($("sc-plot"), series);
    report("sc-out", closed.length
      ? "P2(t): numeric (line) and closed form (dots)"
      : "P2(t): numeric only (closed form needs D2 = 0, R2 = 1, B2 != 0)");
  } catch (e) {
    report("sc-out", String(e), true);
  }
}

function fillPreset() {
  const v = PRESETS[$("sc-preset").value];
  NAMES.forEach((n, i) => ($(`sc-${n}`).value = v[i]));
}

$("sc-fields").innerHTML = NAMES.map(
  (n) => `<label>${n} <input id="sc-${n}" type="number" step="0.1"></label>`,
).join("");

await init();
fillPreset();
$("sc-preset").addEventListener("change", () => { fillPreset(); runScalar(); });
$("ex-run").addEventListener("click", runExample);
$("sc-run").addEventListener("click", runScalar);
$("sc-traj").addEventListener("click", runTrajectory);
runExample();
runScalar();
