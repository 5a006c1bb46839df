/** DOM bootstrap: wires the annotation session to the page. */

import { LabelingClient, QueryPayload } from "./api.js";
import { renderChart, settlingIndex, transpose } from "./charts.js";
import { AnnotationSession, Choice } from "./session.js";

const OUTPUT_COLORS = ["#2a6fdb", "#d94f30", "#2c9e4b"];
const INPUT_COLORS = ["#7345c0", "#c08a1e"];

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node;
}

function renderPanel(panel: HTMLElement, query: QueryPayload, side: "first" | "second"): void {
  const series = query[side];
  const outputs = transpose(series.y);
  const inputs = transpose(series.u);
  const charts: string[] = [];
  charts.push(renderChart({
    width: 360, height: 130,
    series: outputs.map((points, i) => ({ points, color: OUTPUT_COLORS[i % OUTPUT_COLORS.length] })),
    yLabel: "outputs",
  }));
  charts.push(renderChart({
    width: 360, height: 110,
    series: inputs.map((points, i) => ({ points, color: INPUT_COLORS[i % INPUT_COLORS.length] })),
    yLabel: "inputs",
  }));
  charts.push(renderChart({
    width: 360, height: 110,
    series: [{ points: series.y_norm, color: "#444" }],
    band: query.epsilon,
    yLabel: "‖y‖",
  }));
  panel.querySelector(".charts")!.innerHTML = charts.join("");
  const debug = panel.querySelector(".debug") as HTMLElement;
  debug.textContent = `settles at step ${settlingIndex(series.y_norm, query.epsilon)}`;
}

function main(): void {
  const client = new LabelingClient("");
  const idle = el("idle");
  const compare = el("compare");
  const banner = el("banner");
  const progress = el("progress");
  const buttons: Record<Choice, HTMLButtonElement> = {
    A: el("prefer-a") as HTMLButtonElement,
    B: el("prefer-b") as HTMLButtonElement,
  };

  const session = new AnnotationSession(client, {
    onQuery: (query) => {
      idle.hidden = true;
      compare.hidden = false;
      banner.hidden = true;
      renderPanel(el("panel-a"), query, "first");
      renderPanel(el("panel-b"), query, "second");
      buttons.A.disabled = false;
      buttons.B.disabled = false;
    },
    onIdle: () => {
      idle.hidden = false;
      compare.hidden = true;
    },
    onStatus: (status) => {
      progress.textContent =
        `iteration ${status.iteration} · ${status.answered} answered · ` +
        `${status.pending} pending`;
    },
    onError: (message) => {
      banner.textContent = message;
      banner.hidden = false;
    },
  });

  const submit = (choice: Choice) => {
    buttons.A.disabled = true;
    buttons.B.disabled = true;
    void session.choose(choice).then((submitted) => {
      if (!submitted) {
        // Failed post: the query is still on screen, allow retrying.
        buttons.A.disabled = false;
        buttons.B.disabled = false;
      }
      return session.pollOnce();
    });
  };
  buttons.A.addEventListener("click", () => submit("A"));
  buttons.B.addEventListener("click", () => submit("B"));

  (el("debug-toggle") as HTMLInputElement).addEventListener("change", (ev) => {
    const show = (ev.target as HTMLInputElement).checked;
    document.querySelectorAll<HTMLElement>(".debug").forEach((node) => {
      node.hidden = !show;
    });
  });

  session.start(2000);
}

main();
