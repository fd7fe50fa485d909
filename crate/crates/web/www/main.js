import init, { normalize_text, reformulate_text, evaluate_labels } from "./pkg/sentipipe_web.js";

const $ = (id) => document.getElementById(id);

function guarded(out, fn) {
  return () => {
    out.classList.remove("error");
    try {
      fn();
    } catch (e) {
      out.classList.add("error");
      out.textContent = String(e.message ?? e);
    }
  };
}

function tokenTable(view) {
  const rows = [
    ["token", view.tokens],
    ["id", view.ids],
    ["segment", view.segments],
  ];
  const table = document.createElement("table");
  for (const [name, values] of rows) {
    const tr = table.insertRow();
    const th = document.createElement("th");
    th.textContent = name;
    tr.appendChild(th);
    values.forEach((v, i) => {
      const td = tr.insertCell();
      td.textContent = v;
      if (view.segments[i] === 1) td.className = "seg1";
    });
  }
  return table;
}

async function main() {
  try {
    await init();
  } catch (e) {
    $("status").textContent = "Could not load the wasm module. Build it first (see README).";
    $("status").className = "error";
    return;
  }
  $("status").textContent = "Ready.";

  $("norm-run").onclick = guarded($("norm-out"), () => {
    $("norm-out").textContent = normalize_text($("norm-text").value, $("norm-steps").value);
  });

  $("ref-run").onclick = guarded($("ref-out"), () => {
    $("ref-table").replaceChildren();
    const view = JSON.parse(
      reformulate_text($("ref-text").value, $("ref-entity").value, $("ref-scheme").value, Number($("ref-len").value)),
    );
    $("ref-out").textContent =
      `sentence A: ${view.sentence_a}\n` + (view.sentence_b ? `sentence B: ${view.sentence_b}` : "(single sentence)");
    $("ref-table").appendChild(tokenTable(view));
  });

  $("met-run").onclick = guarded($("met-out"), () => {
    $("met-out").textContent = evaluate_labels($("met-gold").value, $("met-pred").value);
  });
}

main();
