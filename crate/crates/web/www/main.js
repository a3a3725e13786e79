import init, { Demo } from "./pkg/ergoflow_web.js";

const $ = (id) => document.getElementById(id);
let demo;
let tableJson = null;

function status(msg) {
  $("status").textContent = msg ?? "";
}

function rebuild() {
  demo = new Demo(Number($("delta").value));
  if (tableJson) demo.load_table(tableJson);
}

// Maps [-1, 1]² onto the canvas with y pointing up.
function toCanvas(c, x, y) {
  return [((x + 1) / 2) * c.width, ((1 - y) / 2) * c.height];
}

function drawPath(canvas, pts, offset) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.strokeStyle = "#ddd";
  ctx.beginPath();
  const [cx, cy] = toCanvas(canvas, 0, 0);
  ctx.arc(cx, cy, canvas.width / 2, 0, 2 * Math.PI);
  ctx.stroke();
  ctx.strokeStyle = "rgba(30, 90, 180, 0.35)";
  ctx.beginPath();
  for (let i = 0; i < pts.length; i += 4) {
    const [px, py] = toCanvas(canvas, pts[i + offset], pts[i + offset + 1]);
    if (i === 0) ctx.moveTo(px, py);
    else ctx.lineTo(px, py);
  }
  ctx.stroke();
}

function drawGrid(canvas, values, n) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width / n;
  for (let r = 0; r < n; r++) {
    for (let c = 0; c < n; c++) {
      const v = values[r * n + c];
      const shade = Math.round(255 * (1 - v));
      ctx.fillStyle = `rgb(${shade}, ${shade}, 255)`;
      // Row 0 is the bottom of the box.
      ctx.fillRect(c * w, canvas.height - (r + 1) * w, w + 0.5, w + 0.5);
    }
  }
}

function params() {
  return [Number($("k").value), Number($("n").value), BigInt($("seed").value)];
}

function guarded(fn) {
  return () => {
    try {
      status();
      fn();
    } catch (e) {
      status(e.message ?? String(e));
    }
  };
}

const draw = guarded(() => {
  const pts = demo.trajectory(...params());
  drawPath($("latent"), pts, 0);
  drawPath($("mapped"), pts, 2);
});

const cover = guarded(() => {
  const grid = Number($("grid").value);
  const cov = demo.coverage(...params(), grid, $("target").value);
  drawGrid($("occ"), cov.occupancy, grid);
  drawGrid($("tgt"), cov.target, grid);
  $("rho").textContent = cov.rho.toFixed(3);
});

async function main() {
  await init();
  rebuild();
  $("k").addEventListener("input", () => {
    $("k-out").textContent = $("k").value;
    draw();
  });
  $("delta").addEventListener("change", guarded(() => { rebuild(); draw(); }));
  $("draw").addEventListener("click", draw);
  $("cover").addEventListener("click", cover);
  $("identity").addEventListener("click", guarded(() => {
    tableJson = null;
    demo.clear_table();
    $("map-info").textContent = "identity map";
    draw();
  }));
  $("lut").addEventListener("change", async (ev) => {
    const file = ev.target.files[0];
    if (!file) return;
    const text = await file.text();
    guarded(() => {
      const res = demo.load_table(text);
      tableJson = text;
      $("map-info").textContent = `${file.name}: ${res}×${res} table`;
      draw();
    })();
  });
  draw();
}

main();
