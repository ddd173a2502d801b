/**
 * Progressive enhancement for hdb pages.
 *
 * The server marks eligible elements with data-hdb-enhance attributes; this
 * bundle discovers them and upgrades the experience. Every flow works with
 * scripts disabled; nothing here talks to the network except a form's own
 * submission.
 *
 * Markers:
 *   data-hdb-enhance="result-table"  sortable headers + a filter box
 *   data-hdb-enhance="delete-form"   explicit confirmation before submit
 *   data-hdb-enhance="input-form"    client-side required-field check
 *   data-hdb-enhance="upload-form"   upload progress bar
 * Required fields carry data-hdb-required="1".
 */

type SortDirection = "ascending" | "descending";

/** Indirection point for page navigation so tests can intercept it. */
export const nav = {
  go(url: string): void {
    window.location.assign(url);
  },
};

// ---------------------------------------------------------------- sorting --

export function enhanceResultTable(table: HTMLTableElement): void {
  const headerRow = table.querySelector("tr");
  if (!headerRow) return;
  const headers = Array.from(headerRow.querySelectorAll("th"));
  if (headers.length === 0) return;
  headers.forEach((th, index) => {
    th.classList.add("hdb-sortable");
    th.addEventListener("click", () => sortByColumn(table, headers, th, index));
  });
  installFilterBox(table);
}

function bodyRows(table: HTMLTableElement): HTMLTableRowElement[] {
  return Array.from(table.querySelectorAll("tr")).filter(
    (row) => row.querySelector("th") === null,
  );
}

function sortByColumn(
  table: HTMLTableElement,
  headers: HTMLTableCellElement[],
  th: HTMLTableCellElement,
  index: number,
): void {
  const direction: SortDirection =
    th.getAttribute("aria-sort") === "ascending" ? "descending" : "ascending";
  headers.forEach((h) => h.removeAttribute("aria-sort"));
  th.setAttribute("aria-sort", direction);

  const rows = bodyRows(table);
  if (rows.length === 0) return;
  const parent = rows[0].parentElement;
  if (!parent) return;

  const keyed = rows.map((row, position) => ({
    row,
    position,
    key: cellText(row, index),
  }));
  keyed.sort((a, b) => {
    const order = compareCells(a.key, b.key);
    const oriented = direction === "ascending" ? order : -order;
    return oriented !== 0 ? oriented : a.position - b.position; // stable
  });
  keyed.forEach((entry) => parent.appendChild(entry.row));
}

function cellText(row: HTMLTableRowElement, index: number): string {
  const cell = row.cells[index];
  return cell ? (cell.textContent ?? "").trim() : "";
}

function compareCells(a: string, b: string): number {
  const na = Number(a);
  const nb = Number(b);
  if (a !== "" && b !== "" && !Number.isNaN(na) && !Number.isNaN(nb)) {
    return na - nb;
  }
  return a < b ? -1 : a > b ? 1 : 0;
}

function installFilterBox(table: HTMLTableElement): void {
  const box = document.createElement("input");
  box.type = "search";
  box.placeholder = "Filter rows";
  box.className = "hdb-filter-box";
  box.addEventListener("input", () => {
    const needle = box.value.trim().toLowerCase();
    for (const row of bodyRows(table)) {
      const text = (row.textContent ?? "").toLowerCase();
      row.style.display = needle === "" || text.includes(needle) ? "" : "none";
    }
  });
  table.parentElement?.insertBefore(box, table);
}

// --------------------------------------------------------------- confirm --

export function confirmDelete(form: HTMLFormElement): void {
  form.addEventListener("submit", (event) => {
    if (!window.confirm("Really delete the selected rows?")) {
      event.preventDefault();
    }
  });
}

// -------------------------------------------------------------- required --

export function validateRequired(form: HTMLFormElement): void {
  form.addEventListener("submit", (event) => {
    let blocked = false;
    const fields = form.querySelectorAll<HTMLElement>("[data-hdb-required]");
    fields.forEach((field) => {
      const control = field as HTMLInputElement | HTMLTextAreaElement;
      const empty = (control.value ?? "").trim() === "";
      clearInlineMessage(control);
      control.classList.remove("hdb-invalid");
      if (empty) {
        blocked = true;
        control.classList.add("hdb-invalid");
        showInlineMessage(control, "This field is required.");
      }
    });
    if (blocked) {
      event.preventDefault();
    }
  });
}

function showInlineMessage(control: HTMLElement, text: string): void {
  const message = document.createElement("span");
  message.className = "hdb-inline-message";
  message.textContent = text;
  control.insertAdjacentElement("afterend", message);
}

function clearInlineMessage(control: HTMLElement): void {
  const next = control.nextElementSibling;
  if (next && next.classList.contains("hdb-inline-message")) {
    next.remove();
  }
}

// ---------------------------------------------------------------- upload --

export function uploadProgress(form: HTMLFormElement): void {
  form.addEventListener("submit", (event) => {
    if (event.defaultPrevented) return; // a validator already blocked it
    const fileInput = form.querySelector<HTMLInputElement>('input[type="file"]');
    if (!fileInput || !fileInput.files || fileInput.files.length === 0) {
      return; // nothing to track; plain submission is fine
    }
    event.preventDefault();

    const bar = document.createElement("progress");
    bar.className = "hdb-progress";
    bar.max = 1;
    bar.value = 0;
    form.appendChild(bar);
    setDisabled(form, true);

    const xhr = new XMLHttpRequest();
    xhr.open(form.method || "POST", form.action || window.location.href);
    xhr.upload.onprogress = (progress) => {
      if (progress.lengthComputable && progress.total > 0) {
        const ratio = progress.loaded / progress.total;
        if (ratio > bar.value) bar.value = ratio; // never runs backwards
      }
    };
    xhr.onload = () => {
      bar.value = 1;
      nav.go(xhr.responseURL || window.location.href);
    };
    xhr.onerror = () => {
      bar.remove();
      setDisabled(form, false);
      showInlineMessage(form, "Upload failed; please retry.");
    };
    xhr.send(new FormData(form));
  });
}

function setDisabled(form: HTMLFormElement, disabled: boolean): void {
  form
    .querySelectorAll<HTMLInputElement>("input[type=submit], button")
    .forEach((control) => {
      control.disabled = disabled;
    });
}

// ------------------------------------------------------------- discovery --

const ENHANCERS: Record<string, (element: Element) => void> = {
  "result-table": (element) => enhanceResultTable(element as HTMLTableElement),
  "delete-form": (element) => confirmDelete(element as HTMLFormElement),
  "input-form": (element) => validateRequired(element as HTMLFormElement),
  "upload-form": (element) => uploadProgress(element as HTMLFormElement),
};

export function enhanceAll(root: ParentNode): void {
  root.querySelectorAll("[data-hdb-enhance]").forEach((element) => {
    const tokens = (element.getAttribute("data-hdb-enhance") ?? "").split(/\s+/);
    for (const token of tokens) {
      const enhance = ENHANCERS[token];
      if (enhance) {
        try {
          enhance(element);
        } catch {
          // a malformed element never breaks the rest of the page
        }
      }
    }
  });
}

if (typeof document !== "undefined") {
  if (document.readyState === "loading") {
    document.addEventListener("DOMContentLoaded", () => enhanceAll(document));
  } else {
    enhanceAll(document);
  }
}
