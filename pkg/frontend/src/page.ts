/** The page skeleton, shared by the browser bootstrap and the tests so both
 * wire the exact same DOM. */
export const PAGE_BODY = `
<main>
  <header>
    <h1>latedit</h1>
    <span id="status" role="status"></span>
  </header>
  <section id="start">
    <input id="sample-prompt" type="text" value="demo blob"
           aria-label="seed text for a sample asset">
    <button id="sample-button" type="button">Load sample asset</button>
  </section>
  <section id="catalog" aria-label="instruction picker"></section>
  <section id="panes">
    <figure id="pane-base">
      <img alt="base turntable">
      <figcaption>base</figcaption>
    </figure>
    <figure id="pane-head">
      <img alt="edited turntable">
      <figcaption>edited</figcaption>
    </figure>
  </section>
  <ol id="stack" aria-label="edit stack"></ol>
</main>
`;
