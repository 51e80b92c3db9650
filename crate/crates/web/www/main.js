import init, { counterterms, bridge, free_occupations } from "./pkg/phi4lab_web.js";

const num = (id) => Number(document.getElementById(id).value);
const fmt = (x) => (Math.abs(x) < 1e-3 || Math.abs(x) >= 1e4 ? x.toExponential(6) : x.toFixed(8));

function table(head, rows) {
  const th = head.map((h) => `<th>${h}</th>`).join("");
  const tr = rows.map((r) => "<tr>" + r.map((c) => `<td>${typeof c === "number" ? fmt(c) : c}</td>`).join("") + "</tr>").join("");
  return `<table><tr>${th}</tr>${tr}</table>`;
}

function wire(button, out, run) {
  document.getElementById(button).addEventListener("click", () => {
    const el = document.getElementById(out);
    el.textContent = "computing...";
    // let the label paint before the synchronous call
    setTimeout(() => {
      try {
        el.innerHTML = run();
      } catch (e) {
        el.innerHTML = `<span class="err">${e.message ?? e}</span>`;
      }
    }, 10);
  });
}

await init();

wire("ct-run", "ct-out", () => {
  const r = JSON.parse(counterterms(num("ct-eps"), num("ct-k")));
  return table(["quantity", "value", "tail"], [["a", r.a, r.a_tail], ["6b", r.six_b, r.six_b_tail], ["eps * a", r.eps * r.a, ""]]);
});

wire("br-run", "br-out", () => {
  const r = JSON.parse(bridge(num("br-eps"), num("br-lambda"), num("br-k")));
  const rows = [["free energy", r.quantum_free_energy, r.classical_free_energy]];
  r.quantum_falling.forEach((q, i) => rows.push([`moment ${i + 1}`, q, r.classical_moments[i]]));
  return `<p>Fock cap ${r.n_max}</p>` + table(["", "quantum", "classical"], rows);
});

wire("fo-run", "fo-out", () => {
  const r = JSON.parse(free_occupations(num("fo-lambda"), num("fo-modes")));
  return table(["k", "lambda <n_k>", "1/<k>^2", "difference"], r.map((o) => [o.mode, o.lambda_occupation, o.free_variance, o.lambda_occupation - o.free_variance]));
});
