/**
 * DOM rendering for annotation tasks: the image under review, the proposal
 * banner (class or cluster context with sibling thumbnails and an editable
 * description) and one button per class.
 */

import { SessionInfo, Task } from './api.js';
import { classKeyLabel } from './keyboard.js';

export const CLUSTER_PAGE_SIZE = 24;

export interface TaskHandlers {
  choose(classIndex: number): void;
  accept(): void;
}

export function renderProgress(container: HTMLElement, done: number, total: number): void {
  container.textContent = total ? `${done} / ${total}` : '';
}

function renderClusterGrid(
  doc: Document,
  parent: HTMLElement,
  members: { image_id: string; image_url: string }[],
  baseUrl: string,
): void {
  const grid = doc.createElement('div');
  grid.className = 'cluster-grid';
  let page = 0;
  const pages = Math.max(1, Math.ceil(members.length / CLUSTER_PAGE_SIZE));

  const draw = () => {
    grid.innerHTML = '';
    const slice = members.slice(
      page * CLUSTER_PAGE_SIZE,
      (page + 1) * CLUSTER_PAGE_SIZE,
    );
    for (const member of slice) {
      const img = doc.createElement('img');
      img.className = 'thumb';
      img.src = baseUrl + member.image_url;
      img.title = member.image_id;
      grid.appendChild(img);
    }
  };
  draw();
  parent.appendChild(grid);

  if (pages > 1) {
    const nav = doc.createElement('div');
    nav.className = 'cluster-nav';
    const label = doc.createElement('span');
    const update = () => {
      label.textContent = `page ${page + 1} / ${pages}`;
    };
    const prev = doc.createElement('button');
    prev.textContent = 'prev';
    prev.addEventListener('click', () => {
      page = (page + pages - 1) % pages;
      draw();
      update();
    });
    const next = doc.createElement('button');
    next.textContent = 'next';
    next.addEventListener('click', () => {
      page = (page + 1) % pages;
      draw();
      update();
    });
    update();
    nav.append(prev, label, next);
    parent.appendChild(nav);
  }
}

export function renderTask(
  doc: Document,
  container: HTMLElement,
  task: Task,
  info: SessionInfo,
  handlers: TaskHandlers,
  baseUrl = '',
): void {
  container.innerHTML = '';
  if (task.done) return;

  const image = doc.createElement('img');
  image.className = 'task-image';
  image.src = baseUrl + (task.image_url ?? '');
  image.alt = task.image_id ?? '';
  container.appendChild(image);

  const proposal = task.proposal;
  if (proposal) {
    const banner = doc.createElement('div');
    banner.className = 'proposal';
    if (proposal.kind === 'certain') {
      banner.textContent =
        `proposal: ${proposal.class_name ?? `class ${proposal.class_index}`} ` +
        `(Enter to accept)`;
    } else {
      const title = doc.createElement('div');
      const suggested = proposal.suggested_class;
      title.textContent =
        `ambiguous image, cluster ${proposal.cluster_id}` +
        (suggested !== undefined
          ? `; Enter accepts ${info.class_names[suggested]}`
          : '');
      banner.appendChild(title);

      const description = doc.createElement('textarea');
      description.className = 'cluster-description';
      description.value = proposal.description ?? '';
      banner.appendChild(description);

      renderClusterGrid(doc, banner, proposal.members ?? [], baseUrl);
    }
    container.appendChild(banner);
  }

  const buttons = doc.createElement('div');
  buttons.className = 'classes';
  info.class_names.forEach((name, classIndex) => {
    const button = doc.createElement('button');
    const key = classKeyLabel(classIndex);
    button.textContent = key ? `${key}: ${name}` : name;
    button.dataset.classIndex = String(classIndex);
    button.addEventListener('click', () => handlers.choose(classIndex));
    buttons.appendChild(button);
  });
  const accept = doc.createElement('button');
  accept.className = 'accept';
  accept.textContent = 'accept proposal (Enter)';
  accept.disabled = !proposal;
  accept.addEventListener('click', () => handlers.accept());
  buttons.appendChild(accept);
  container.appendChild(buttons);
}
