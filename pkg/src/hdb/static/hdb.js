"use strict";
(() => {
  // src/hdb.ts
  var nav = {
    go(url) {
      window.location.assign(url);
    }
  };
  function enhanceResultTable(table) {
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
  function bodyRows(table) {
    return Array.from(table.querySelectorAll("tr")).filter(
      (row) => row.querySelector("th") === null
    );
  }
  function sortByColumn(table, headers, th, index) {
    const direction = th.getAttribute("aria-sort") === "ascending" ? "descending" : "ascending";
    headers.forEach((h) => h.removeAttribute("aria-sort"));
    th.setAttribute("aria-sort", direction);
    const rows = bodyRows(table);
    if (rows.length === 0) return;
    const parent = rows[0].parentElement;
    if (!parent) return;
    const keyed = rows.map((row, position) => ({
      row,
      position,
      key: cellText(row, index)
    }));
    keyed.sort((a, b) => {
      const order = compareCells(a.key, b.key);
      const oriented = direction === "ascending" ? order : -order;
      return oriented !== 0 ? oriented : a.position - b.position;
    });
    keyed.forEach((entry) => parent.appendChild(entry.row));
  }
  function cellText(row, index) {
    var _a;
    const cell = row.cells[index];
    return cell ? ((_a = cell.textContent) != null ? _a : "").trim() : "";
  }
  function compareCells(a, b) {
    const na = Number(a);
    const nb = Number(b);
    if (a !== "" && b !== "" && !Number.isNaN(na) && !Number.isNaN(nb)) {
      return na - nb;
    }
    return a < b ? -1 : a > b ? 1 : 0;
  }
  function installFilterBox(table) {
    var _a;
    const box = document.createElement("input");
    box.type = "search";
    box.placeholder = "Filter rows";
    box.className = "hdb-filter-box";
    box.addEventListener("input", () => {
      var _a2;
      const needle = box.value.trim().toLowerCase();
      for (const row of bodyRows(table)) {
        const text = ((_a2 = row.textContent) != null ? _a2 : "").toLowerCase();
        row.style.display = needle === "" || text.includes(needle) ? "" : "none";
      }
    });
    (_a = table.parentElement) == null ? void 0 : _a.insertBefore(box, table);
  }
  function confirmDelete(form) {
    form.addEventListener("submit", (event) => {
      if (!window.confirm("Really delete the selected rows?")) {
        event.preventDefault();
      }
    });
  }
  function validateRequired(form) {
    form.addEventListener("submit", (event) => {
      let blocked = false;
      const fields = form.querySelectorAll("[data-hdb-required]");
      fields.forEach((field) => {
        var _a;
        const control = field;
        const empty = ((_a = control.value) != null ? _a : "").trim() === "";
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
  function showInlineMessage(control, text) {
    const message = document.createElement("span");
    message.className = "hdb-inline-message";
    message.textContent = text;
    control.insertAdjacentElement("afterend", message);
  }
  function clearInlineMessage(control) {
    const next = control.nextElementSibling;
    if (next && next.classList.contains("hdb-inline-message")) {
      next.remove();
    }
  }
  function uploadProgress(form) {
    form.addEventListener("submit", (event) => {
      if (event.defaultPrevented) return;
      const fileInput = form.querySelector('input[type="file"]');
      if (!fileInput || !fileInput.files || fileInput.files.length === 0) {
        return;
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
          if (ratio > bar.value) bar.value = ratio;
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
  function setDisabled(form, disabled) {
    form.querySelectorAll("input[type=submit], button").forEach((control) => {
      control.disabled = disabled;
    });
  }
  var ENHANCERS = {
    "result-table": (element) => enhanceResultTable(element),
    "delete-form": (element) => confirmDelete(element),
    "input-form": (element) => validateRequired(element),
    "upload-form": (element) => uploadProgress(element)
  };
  function enhanceAll(root) {
    root.querySelectorAll("[data-hdb-enhance]").forEach((element) => {
      var _a;
      const tokens = ((_a = element.getAttribute("data-hdb-enhance")) != null ? _a : "").split(/\s+/);
      for (const token of tokens) {
        const enhance = ENHANCERS[token];
        if (enhance) {
          try {
            enhance(element);
          } catch (e) {
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
})();
