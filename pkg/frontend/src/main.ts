/**
 * Browser entry point: session setup form, task loop with keyboard
 * shortcuts, and the live report view.
 */

import { ApiClient, Task, SessionInfo } from './api.js';
import { mapKey } from './keyboard.js';
import { renderReport } from './report.js';
import { SessionFlow } from './session.js';
import { renderProgress, renderTask } from './views.js';

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const baseUrlInput = el<HTMLInputElement>('base-url');
const datasetSelect = el<HTMLSelectElement>('dataset');
const modeSelect = el<HTMLSelectElement>('mode');
const annotatorInput = el<HTMLInputElement>('annotator');
const repetitionInput = el<HTMLInputElement>('repetition');
const startButton = el<HTMLButtonElement>('start');
const refreshButton = el<HTMLButtonElement>('refresh-datasets');
const reportButton = el<HTMLButtonElement>('show-report');
const progressEl = el<HTMLElement>('progress');
const taskEl = el<HTMLElement>('task');
const statusEl = el<HTMLElement>('status');
const reportEl = el<HTMLElement>('report');

let api = new ApiClient(baseUrlInput.value);
let flow: SessionFlow | null = null;

function status(message: string): void {
  statusEl.textContent = message;
}

async function refreshDatasets(): Promise<void> {
  api = new ApiClient(baseUrlInput.value);
  try {
    const datasets = await api.listDatasets();
    datasetSelect.innerHTML = '';
    for (const d of datasets) {
      const option = document.createElement('option');
      option.value = d.name;
      option.textContent = `${d.name} (${d.n_items} images)`;
      datasetSelect.appendChild(option);
    }
    status(datasets.length ? `${datasets.length} dataset(s)` : 'no datasets at this URL');
  } catch (err) {
    status(`cannot reach service: ${err}`);
  }
}

const hooks = {
  onTask(task: Task, info: SessionInfo) {
    renderTask(document, taskEl, task, info, {
      choose: (classIndex: number) => void flow?.submit(classIndex),
      accept: () => void flow?.acceptProposal(),
    }, baseUrlInput.value.replace(/\/+$/, ''));
  },
  onDone(info: SessionInfo) {
    taskEl.innerHTML = '<p class="placeholder">session complete</p>';
    status(`session ${info.session_id} finished`);
    void showReport();
  },
  onProgress(done: number, total: number) {
    renderProgress(progressEl, done, total);
  },
  onError(message: string) {
    status(message);
  },
};

async function startSession(): Promise<void> {
  api = new ApiClient(baseUrlInput.value);
  flow = new SessionFlow(api, hooks);
  try {
    await flow.start(
      annotatorInput.value || 'anonymous',
      datasetSelect.value,
      modeSelect.value,
      Number(repetitionInput.value) || 1,
    );
    status(`annotating in mode ${modeSelect.value}`);
  } catch (err) {
    status(`cannot start session: ${err}`);
  }
}

async function showReport(): Promise<void> {
  try {
    const payload = await api.report(datasetSelect.value);
    renderReport(document, reportEl, payload);
  } catch (err) {
    status(`cannot load report: ${err}`);
  }
}

document.addEventListener('keydown', (event) => {
  if (!flow || event.target instanceof HTMLInputElement ||
      event.target instanceof HTMLTextAreaElement) {
    return;
  }
  const action = mapKey(
    event.key,
    flow.info?.num_classes ?? 0,
    flow.acceptClass() !== null,
  );
  if (!action) return;
  event.preventDefault();
  if (action.type === 'accept') {
    void flow.acceptProposal();
  } else {
    void flow.submit(action.classIndex);
  }
});

startButton.addEventListener('click', () => void startSession());
refreshButton.addEventListener('click', () => void refreshDatasets());
reportButton.addEventListener('click', () => void showReport());

void refreshDatasets();
