use hdsr_core::corpus::{procedural_glyphs, synth_samples, SplitPolicy, SynthesisConfig, Split};

fn main() {
    let corpus = procedural_glyphs(7, 12).unwrap();
    // contact sheet of one glyph per class
    for d in 0u8..10 {
        let g = &corpus.class(d)[0];
        g.raster.write_png(std::path::Path::new(&format!("/tmp/glyph_{d}.png"))).unwrap();
        println!("class {d}: {}x{} ink={}", g.width(), g.height(), g.raster.ink_count());
    }
    let policy = SplitPolicy { train: (0,7), validation: (8,9), test: (10,11) };
    let cfg = SynthesisConfig { touching_fraction: 0.5, rng_seed: 3, ..Default::default() };
    let samples = synth_samples(&corpus, &cfg, &policy, Split::Train, 6).unwrap();
    for (i, s) in samples.iter().enumerate() {
        s.raster.write_png(std::path::Path::new(&format!("/tmp/string_{i}_{}.png", s.label))).unwrap();
        println!("string '{}' {}x{} touching {:?}", s.label, s.raster.width(), s.raster.height(), s.touching);
    }
}
