import init, { costCurve, dropMask, groundProfile } from "./pkg/residualvit_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function guard(errId, f) {
  try {
    $(errId).textContent = "";
    f();
  } catch (e) {
    $(errId).textContent = String(e.message ?? e);
  }
}

function renderCost() {
  guard("cost-err", () => {
    const rows = JSON.parse(costCurve(num("cev"), num("k"), num("p"), num("maxn")));
    const head = "<tr><th>N</th><th>drop-only cost</th><th>savings</th><th>with overheads</th><th>savings</th></tr>";
    $("cost").innerHTML = head + rows.map((r) =>
      `<tr><td>${r.n}</td><td>${r.drop_only_cost.toFixed(1)}</td><td>${r.drop_only_savings.toFixed(1)}%</td>` +
      `<td>${r.extended_cost.toFixed(1)}</td><td>${r.extended_savings.toFixed(1)}%</td></tr>`).join("");
  });
}

function renderMask() {
  guard("mask-err", () => {
    const rows = num("rows"), cols = num("cols");
    // Motion scores: a blob moving with the seed, so the strategy has something to track.
    const cx = (num("seed") * 3) % cols, cy = rows / 2;
    const scores = new Float64Array(rows * cols).map((_, i) => {
      const y = Math.floor(i / cols), x = i % cols;
      return Math.exp(-((x - cx) ** 2 + (y - cy) ** 2) / 8);
    });
    const mask = dropMask(rows, cols, num("mp"), $("strategy").value, num("seed"), scores);
    const grid = $("grid");
    grid.style.gridTemplateColumns = `repeat(${cols}, 22px)`;
    grid.innerHTML = Array.from(mask, (m) => `<div class="${m ? "keep" : ""}"></div>`).join("");
    const kept = mask.reduce((a, b) => a + b, 0);
    $("mask-info").textContent = `${kept} of ${rows * cols} tokens kept`;
  });
}

function renderGround() {
  guard("ground-err", () => {
    const scores = Float64Array.from($("scores").value.trim().split(/[\s,]+/).map(Number));
    const g = JSON.parse(groundProfile(scores, num("window"), $("mode").value, num("alpha"), num("beta"), num("fps")));
    const c = $("profile"), ctx = c.getContext("2d");
    ctx.clearRect(0, 0, c.width, c.height);
    const n = g.scored.length, w = c.width / n;
    const lo = Math.min(...g.scored, g.threshold), hi = Math.max(...g.scored, g.threshold);
    const y = (v) => c.height - 10 - ((v - lo) / (hi - lo || 1)) * (c.height - 20);
    ctx.fillStyle = "rgba(40,160,110,0.25)";
    for (const m of g.moments) {
      ctx.fillRect(m.start * num("fps") * w, 0, (m.end - m.start) * num("fps") * w, c.height);
    }
    ctx.fillStyle = "#36c";
    g.scored.forEach((v, i) => ctx.fillRect(i * w + w * 0.2, y(v), w * 0.6, c.height - 10 - y(v)));
    ctx.strokeStyle = "#c33";
    ctx.beginPath();
    ctx.moveTo(0, y(g.threshold));
    ctx.lineTo(c.width, y(g.threshold));
    ctx.stroke();
    $("moments").innerHTML = "<tr><th>rank</th><th>start (s)</th><th>end (s)</th><th>score</th></tr>" +
      g.moments.map((m, i) => `<tr><td>${i + 1}</td><td>${m.start}</td><td>${m.end}</td><td>${m.score.toFixed(3)}</td></tr>`).join("");
  });
}

await init();
for (const id of ["cev", "k", "p", "maxn"]) $(id).addEventListener("input", renderCost);
for (const id of ["rows", "cols", "mp", "strategy", "seed"]) $(id).addEventListener("input", renderMask);
for (const id of ["scores", "window", "mode", "alpha", "beta", "fps"]) $(id).addEventListener("input", renderGround);
renderCost();
renderMask();
renderGround();
