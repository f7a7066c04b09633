import init, { chunk_text, spanning_trees, run_pipeline } from "./pkg/kgctx_wasm.js";

const $ = (id) => document.getElementById(id);

const SAMPLE_DOCS = [
  { doc_id: "mill", title: "Old mill town", text: "The old mill town of Hollin sits on the Ostra Vey. Its mill ground barley until 1910." },
  { doc_id: "river", title: "Ostra Vey", text: "The Ostra Vey empties into Lake Morrow after a long run through fen country." },
  { doc_id: "lake", title: "Lake Morrow", text: "Lake Morrow is shallow and freezes most winters. Herons nest on its east shore." },
  { doc_id: "fen", title: "Blue Fen", text: "Blue Fen is a wetland reserve crossed by three footbridges." },
  { doc_id: "bridge", title: "Vey bridges", text: "Two stone bridges cross the Ostra Vey near Hollin." },
];
const SAMPLE_TRIPLETS = [
  { head: "Hollin", relation: "sits on", tail: "Ostra Vey", chunk_id: "mill#0" },
  { head: "Hollin", relation: "is", tail: "old mill town", chunk_id: "mill#0" },
  { head: "Ostra Vey", relation: "empties into", tail: "Lake Morrow", chunk_id: "river#0" },
  { head: "Lake Morrow", relation: "has nesting", tail: "herons", chunk_id: "lake#0" },
  { head: "Blue Fen", relation: "crossed by", tail: "footbridges", chunk_id: "fen#0" },
  { head: "stone bridges", relation: "cross", tail: "Ostra Vey", chunk_id: "bridge#0" },
];

const el = (tag, attrs = {}, text) => {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text !== undefined) node.textContent = text;
  return node;
};

const showError = (target, err) => {
  target.replaceChildren(el("div", { class: "error" }, String(err)));
};

function runChunking() {
  const out = $("chunk-out");
  try {
    const chunks = JSON.parse(chunk_text($("chunk-text").value, Number($("chunk-units").value)));
    out.replaceChildren(
      ...chunks.map((c) => {
        const div = el("div", { class: "chunk" }, c.text + " ");
        div.append(el("small", {}, c.chunk_id));
        return div;
      }),
    );
  } catch (e) {
    showError(out, e);
  }
}

function parseEdges(src) {
  return src
    .split("\n")
    .map((l) => l.trim())
    .filter((l) => l)
    .map((line, i) => {
      const parts = line.split("|").map((p) => p.trim());
      if (parts.length !== 4) throw new Error(`line ${i + 1}: expected 4 fields`);
      return { head: parts[0], relation: parts[1], tail: parts[2], weight: Number(parts[3]) };
    });
}

const SVG = "http://www.w3.org/2000/svg";
const svgEl = (tag, attrs, text) => {
  const node = document.createElementNS(SVG, tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text !== undefined) node.textContent = text;
  return node;
};

function drawForest(edges, forest) {
  const svg = $("tree-svg");
  svg.replaceChildren();
  // one circle per component, laid out left to right
  const pos = new Map();
  const width = 940 / Math.max(forest.trees.length, 1);
  forest.trees.forEach((t, ti) => {
    const cx = width * ti + width / 2;
    const r = Math.min(width / 2 - 50, 140);
    t.nodes.forEach((n, ni) => {
      const a = (2 * Math.PI * ni) / t.nodes.length - Math.PI / 2;
      pos.set(n, [cx + r * Math.cos(a), 190 + r * Math.sin(a)]);
    });
  });
  const inTree = new Set(forest.trees.flatMap((t) => t.edges));
  edges.forEach((e, i) => {
    const [ka, kb] = forest.endpoints[i];
    const a = pos.get(ka);
    const b = pos.get(kb);
    if (!a || !b) return;
    const used = inTree.has(i);
    svg.append(
      svgEl("line", {
        x1: a[0], y1: a[1], x2: b[0], y2: b[1],
        stroke: used ? "#2a7" : "#bbb",
        "stroke-width": used ? 2.5 : 1,
        "stroke-dasharray": used ? "" : "4 3",
      }),
    );
    svg.append(svgEl("text", { x: (a[0] + b[0]) / 2, y: (a[1] + b[1]) / 2 - 4, fill: used ? "#174" : "#999" }, `${e.relation} (${e.weight})`));
  });
  for (const [name, [x, y]] of pos) {
    svg.append(svgEl("circle", { cx: x, cy: y, r: 5, fill: "#345" }));
    svg.append(svgEl("text", { x: x + 8, y: y + 4 }, name));
  }
}

function runTrees() {
  const out = $("tree-out");
  try {
    const edges = parseEdges($("tree-edges").value);
    const forest = JSON.parse(spanning_trees(JSON.stringify(edges)));
    out.replaceChildren(
      ...forest.trees.map((t, i) => {
        const order = t.edges.map((j) => `${edges[j].head} ${edges[j].relation} ${edges[j].tail}`).join("; ");
        return el("div", {}, `tree ${i + 1}: ${t.nodes.length} nodes, weight ${t.total_weight.toFixed(2)}, DFS: ${order || "(single node)"}`);
      }),
    );
    drawForest(edges, forest);
  } catch (e) {
    showError(out, e);
  }
}

function parseLines(src) {
  return src
    .split("\n")
    .map((l) => l.trim())
    .filter((l) => l)
    .map((l) => JSON.parse(l));
}

function runQa() {
  const out = $("qa-out");
  try {
    const k = Number($("qa-k").value);
    const input = {
      documents: parseLines($("qa-docs").value),
      triplets: parseLines($("qa-triplets").value),
      question: $("qa-question").value,
      config: {
        seed_k: k,
        budget_k: k,
        hops: Number($("qa-hops").value),
        expansion: $("qa-expansion").checked,
        organization: $("qa-organization").checked,
      },
    };
    const result = JSON.parse(run_pipeline(JSON.stringify(input)));
    const items = result.context.map((c) => {
      const e = c.entry;
      const div = el("div", { class: "chunk" }, c.text + " ");
      const where = e.tree_rank === null ? e.origin : `tree ${e.tree_rank + 1}`;
      div.append(el("small", {}, `${e.chunk_id}, ${where}`));
      return div;
    });
    const trace = el("pre", {}, JSON.stringify(result.trace.trees, null, 2));
    out.replaceChildren(el("div", { class: "answer" }, result.answer || "(no answer)"), ...items, el("details", {}, ""));
    const details = out.lastChild;
    details.append(el("summary", {}, "trees"), trace);
  } catch (e) {
    showError(out, e);
  }
}

await init();
$("qa-docs").value = SAMPLE_DOCS.map((d) => JSON.stringify(d)).join("\n");
$("qa-triplets").value = SAMPLE_TRIPLETS.map((t) => JSON.stringify(t)).join("\n");
$("chunk-run").onclick = runChunking;
$("tree-run").onclick = runTrees;
$("qa-run").onclick = runQa;
runChunking();
runTrees();
