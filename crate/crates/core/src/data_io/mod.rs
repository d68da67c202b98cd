//! File formats, the synthetic glyph corpus, SVG rendering and the
//! generated-character quality loop.

mod checkpoint;
mod jsonl;
mod quality;
mod svg;
mod synth;

pub use checkpoint::{checkpoint_paths, load_checkpoint, save_checkpoint, Checkpoint, TensorEntry};
pub use jsonl::{read_jsonl, write_jsonl, Corpus, Split};
pub use quality::{quality_report, CharacterSource, ClassQuality, Drawn, QualityReport, Recognizer};
pub use svg::render_svg;
pub use synth::{builtin_templates, synthesize_corpus, GlyphTemplate, SynthConfig};
