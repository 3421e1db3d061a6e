// Page wiring: build the case form from the served schema, screen on
// submit, render the report, and drive what-if re-screening.

import { ApiError, ServiceClient, loadRuntimeConfig } from "./api";
import { CaseForm } from "./form";
import { renderErrorBanner, renderReport } from "./render";
import { WhatIfController } from "./whatif";
import type { CaseValues, SchemaDocument } from "./types";

const WHATIF_FIELDS = ["mmse", "age", "nwbv", "gds", "wmh_load"];

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function fieldInput(name: string, schema: SchemaDocument): HTMLElement {
  const field = schema.fields[name];
  const wrap = document.createElement("label");
  wrap.className = "field";
  wrap.innerHTML = `<span>${name}${field.required ? " *" : ""}</span>`;
  let input: HTMLInputElement | HTMLSelectElement;
  if (field.type === "category") {
    input = document.createElement("select");
    input.innerHTML =
      `<option value="">—</option>` +
      field.values.map((v) => `<option value="${v}">${v}</option>`).join("");
  } else {
    input = document.createElement("input");
    input.type = "text";
    input.placeholder = field.unit || "";
  }
  input.name = name;
  input.dataset.field = name;
  const note = document.createElement("em");
  note.className = "verdict";
  wrap.append(input, note);
  return wrap;
}

async function boot(): Promise<void> {
  const config = await loadRuntimeConfig();
  const client = new ServiceClient(config.service_url);
  const banner = el<HTMLDivElement>("banner");
  const report = el<HTMLDivElement>("report");
  const whatifPanel = el<HTMLDivElement>("whatif");

  let schema: SchemaDocument;
  try {
    schema = await client.schema();
  } catch (err) {
    banner.innerHTML = renderErrorBanner(0, "unreachable", String(err), true);
    banner.querySelector(".retry")?.addEventListener("click", () => boot());
    return;
  }

  const form = new CaseForm(schema);
  const formRoot = el<HTMLFormElement>("case-form");
  formRoot.innerHTML = "";
  for (const name of Object.keys(schema.fields)) {
    formRoot.append(fieldInput(name, schema));
  }
  const submit = document.createElement("button");
  submit.type = "submit";
  submit.textContent = "Screen case";
  submit.disabled = true;
  formRoot.append(submit);

  const whatif = new WhatIfController(
    (body: CaseValues) => client.screen(body),
    (view) => {
      if (view.current) {
        report.innerHTML = renderReport(schema.labels, view.current, view.deltas);
      }
      whatifPanel.classList.toggle("busy", view.inFlight);
    },
  );

  function refreshVerdicts(): void {
    for (const node of formRoot.querySelectorAll<HTMLElement>("[data-field]")) {
      const name = node.dataset.field!;
      const verdict = form.verdict(name);
      const note = node.parentElement?.querySelector<HTMLElement>(".verdict");
      if (note) {
        note.textContent =
          form.dirty.has(name) && !verdict.valid ? verdict.message ?? verdict.code : "";
      }
      node.classList.toggle("invalid", form.dirty.has(name) && !verdict.valid);
    }
    submit.disabled = !form.submittable();
  }

  formRoot.addEventListener("input", (event) => {
    const target = event.target as HTMLInputElement | HTMLSelectElement;
    if (!target.dataset.field) return;
    form.setValue(target.dataset.field, target.value);
    refreshVerdicts();
  });

  formRoot.addEventListener("submit", async (event) => {
    event.preventDefault();
    banner.innerHTML = "";
    const body = form.toRequestBody();
    try {
      const response = await client.screen(body);
      whatif.setBase(body, response);
      buildWhatIfControls(body);
    } catch (err) {
      if (err instanceof ApiError) {
        banner.innerHTML = renderErrorBanner(err.status, err.code, err.detail,
                                             err.retryable);
        for (const fieldError of err.fields) {
          const node = formRoot.querySelector<HTMLElement>(
            `[data-field="${fieldError.field}"]`,
          );
          node?.classList.add("invalid");
        }
        banner.querySelector(".retry")?.addEventListener("click", () =>
          formRoot.requestSubmit());
      } else {
        banner.innerHTML = renderErrorBanner(0, "network", String(err), true);
      }
    }
  });

  function buildWhatIfControls(base: CaseValues): void {
    whatifPanel.innerHTML = "<h3>What-if</h3>";
    for (const name of WHATIF_FIELDS) {
      const field = schema.fields[name];
      if (!field || field.type !== "number" || base[name] == null) continue;
      const max = field.max ?? Number(base[name]) * 2;
      const row = document.createElement("label");
      row.className = "whatif-row";
      row.innerHTML = `<span>${name}</span>`;
      const slider = document.createElement("input");
      slider.type = "range";
      slider.min = String(field.min);
      slider.max = String(max);
      slider.step = field.integer ? "1" : "0.1";
      slider.value = String(base[name]);
      const value = document.createElement("b");
      value.textContent = String(base[name]);
      slider.addEventListener("input", () => {
        value.textContent = slider.value;
        whatif.adjust(name, Number(slider.value));
      });
      row.append(slider, value);
      whatifPanel.append(row);
    }
    const reset = document.createElement("button");
    reset.textContent = "Reset to base";
    reset.addEventListener("click", () => whatif.reset());
    whatifPanel.append(reset);
  }

  refreshVerdicts();
}

boot();
