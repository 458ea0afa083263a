import init, { map_logits, alpha_sweep, attention_heatmap } from "./pkg/salab_wasm.js";

const $ = (id) => document.getElementById(id);
const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

function fail(el, msg) {
  el.innerHTML = `<p class="err">${msg}</p>`;
}

function renderMap() {
  $("alpha-val").textContent = $("alpha").value;
  const out = JSON.parse(map_logits($("logits").value, parseFloat($("alpha").value)));
  if (out.error) return fail($("map-out"), out.error);
  let html = "<table><tr><th>mapping</th>";
  out[0].probs.forEach((_, i) => (html += `<th>p${i + 1}</th>`));
  html += "<th>zeros</th></tr>";
  for (const row of out) {
    html += `<tr><th>${row.name}</th>`;
    for (const p of row.probs) html += `<td class="${p === 0 ? "zero" : ""}">${p.toFixed(4)}</td>`;
    html += `<td>${row.zeros}</td></tr>`;
  }
  $("map-out").innerHTML = html + "</table>";
}

function renderSweep() {
  const c = $("sweep");
  const ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  const out = JSON.parse(alpha_sweep($("logits").value, 200));
  if (out.error) return;
  const pad = 40, w = c.width - 2 * pad, h = c.height - 2 * pad;
  const x = (a) => pad + (a - 1) * w;
  const y = (p) => pad + (1 - p) * h;

  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w, h);
  ctx.fillStyle = "#444";
  ctx.font = "12px sans-serif";
  for (const a of [1, 1.25, 1.5, 1.75, 2]) ctx.fillText(a.toFixed(2), x(a) - 12, c.height - pad + 16);
  for (const p of [0, 0.5, 1]) ctx.fillText(p.toFixed(1), 8, y(p) + 4);

  const n = out.probs[0].length;
  $("sweep-legend").innerHTML = "";
  for (let i = 0; i < n; i++) {
    ctx.strokeStyle = COLORS[i % COLORS.length];
    ctx.lineWidth = 2;
    ctx.beginPath();
    out.alphas.forEach((a, k) => (k ? ctx.lineTo(x(a), y(out.probs[k][i])) : ctx.moveTo(x(a), y(out.probs[k][i]))));
    ctx.stroke();
    $("sweep-legend").innerHTML += `<span style="color:${COLORS[i % COLORS.length]}">■ p${i + 1}</span>`;
  }
}

function renderHeat() {
  $("boost-val").textContent = $("boost").value;
  const c = $("heat");
  const ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  const out = JSON.parse(attention_heatmap($("sentence").value, $("mapping").value, parseFloat($("boost").value)));
  if (out.error) return fail($("heat-info"), out.error);
  const n = out.tokens.length;
  $("heat-info").textContent = `${out.zeros} of ${n * n} weights are exactly zero`;

  const left = 110, top = 90;
  const cell = Math.min(40, Math.floor((c.width - left) / n), Math.floor((c.height - top) / n));
  ctx.font = "12px monospace";
  ctx.textBaseline = "middle";
  for (let i = 0; i < n; i++) {
    ctx.fillStyle = "#222";
    ctx.textAlign = "right";
    ctx.fillText(out.tokens[i], left - 6, top + i * cell + cell / 2);
    ctx.save();
    ctx.translate(left + i * cell + cell / 2, top - 6);
    ctx.rotate(-Math.PI / 3);
    ctx.textAlign = "left";
    ctx.fillText(out.tokens[i], 0, 0);
    ctx.restore();
    for (let j = 0; j < n; j++) {
      const wgt = out.weights[i][j];
      const shade = Math.round(255 * (1 - wgt));
      ctx.fillStyle = wgt === 0 ? "#f4f4f4" : `rgb(${shade},${shade},255)`;
      ctx.fillRect(left + j * cell, top + i * cell, cell - 1, cell - 1);
    }
  }
}

function renderAll() {
  renderMap();
  renderSweep();
}

await init();
for (const id of ["logits", "alpha"]) $(id).addEventListener("input", renderAll);
for (const id of ["sentence", "mapping", "boost"]) $(id).addEventListener("input", renderHeat);
renderAll();
renderHeat();
