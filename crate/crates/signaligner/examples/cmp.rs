use signaligner::checkpoint::load_checkpoint;
use signaligner::cli::read_vocab;
use signaligner::cogen::{loss_tmc, teacher_forced_decode};
use signaligner::corpus::{load_split, Split};
use signaligner::encoder::encode_gloss;

fn main() {
    let ckpt = load_checkpoint("/tmp/bench/full/model.ckpt".as_ref()).unwrap();
    let data = std::path::Path::new("/tmp/bench/data");
    let vocab = read_vocab(data).unwrap();
    let samples = load_split(data, Split::Train, &vocab).unwrap();
    let params = ckpt.params_as::<f32>();
    let cfg = &ckpt.config;
    let mut total = 0.0f64;
    for sample in &samples {
        let text = encode_gloss(&sample.gloss.ids, &params, cfg).unwrap();
        let out = teacher_forced_decode(sample, &text, &params, cfg).unwrap();
        let l = loss_tmc(&out, sample).unwrap();
        total += l as f64 / samples.len() as f64;
    }
    println!("value-path mean loss_tmc over 32: {total:.4}");
}
