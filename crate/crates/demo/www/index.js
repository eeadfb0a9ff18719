import init, { centralityDemo, noiseDemo, attentionDemo } from "./pkg/cagr_demo.js";

const $ = (id) => document.getElementById(id);
const fmt = (x) => x.toFixed(4);

function table(head, rows) {
  const th = head.map((h) => `<th>${h}</th>`).join("");
  const body = rows.map((r) => `<tr>${r.map((c) => `<td>${c}</td>`).join("")}</tr>`).join("");
  return `<table><tr>${th}</tr>${body}</table>`;
}

const bar = (p) => `<span class="bar" style="width:${Math.round(p * 200)}px"></span> ${fmt(p)}`;

function guard(out, f) {
  try {
    out.innerHTML = f();
  } catch (e) {
    out.innerHTML = `<p class="error">${e}</p>`;
  }
}

function showCentrality() {
  guard($("centrality-out"), () => {
    const r = JSON.parse(centralityDemo($("edges").value, Number($("topn").value)));
    const names = Object.keys(r.measures);
    const scores = r.users.map((u, i) => [u, ...names.map((m) => fmt(r.measures[m].scores[i]))]);
    const ranked = r.users.map((u) => [u, ...names.map((m) => r.measures[m].ranked[u].join(", "))]);
    return "<h3>Scores</h3>" + table(["user", ...names], scores) + "<h3>Top neighbors</h3>" + table(["user", ...names], ranked);
  });
}

function showNoise() {
  guard($("noise-out"), () => {
    const r = JSON.parse(noiseDemo($("matrix").value, $("members").value, Number($("gamma").value)));
    const rows = r.classic.map((p, v) => [`item ${v}`, bar(p), bar(r.group_aware[v])]);
    return table(["item", "classic", "group-aware"], rows);
  });
}

function showAttention() {
  guard($("attention-out"), () => {
    const r = JSON.parse(
      attentionDemo($("vectors").value, Number($("heads").value), BigInt($("seed").value), $("perhead").checked),
    );
    const heads = r.attention
      .map((m, h) => `<h3>Head ${h} (scale ${fmt(r.scale)})</h3>` + table(["", ...m.map((_, j) => `m${j}`)], m.map((row, i) => [`m${i}`, ...row.map(fmt)])))
      .join("");
    const lambda = table(["member", "&lambda;"], r.lambda.map((l, i) => [`m${i}`, bar(l)]));
    return heads + "<h3>Pooling weights</h3>" + lambda + `<p>group vector: [${r.group.map(fmt).join(", ")}]</p>`;
  });
}

await init();
$("status").textContent = "Ready.";
$("run-centrality").onclick = showCentrality;
$("run-noise").onclick = showNoise;
$("run-attention").onclick = showAttention;
showCentrality();
showNoise();
showAttention();
