use wavemae::eval::tuples::{gpe_embeddings_eval, make_tuples, sign_flip_p_value};
use wavemae::model::{Model, ModelConfig};
use wavemae::training::SynthSpec;

fn spec(geo_signal: f64, texture: f64) -> SynthSpec {
    let mut s = SynthSpec::new(1, 2, 32, 32, 0);
    s.levels = 3;
    s.geo_signal = geo_signal;
    s.texture_strength = texture;
    s
}

#[test]
fn untrained_encoder_without_geo_has_no_margin() {
    let mut cfg = ModelConfig::tiny(2, 32, 32);
    cfg.use_gpe = false;
    let model = Model::new(cfg, 11).unwrap();
    let tuples = make_tuples(&spec(0.0, 0.0), 500, 5).unwrap();
    let r = gpe_embeddings_eval(&model, &tuples).unwrap();
    let p = sign_flip_p_value(&r.margins(), 5000, 1);
    assert!(p > 0.01, "margin {} p = {p}", r.margin);
}

#[test]
fn geo_encoding_gives_positive_margin() {
    let model = Model::new(ModelConfig::tiny(2, 32, 32), 11).unwrap();
    let tuples = make_tuples(&spec(1.0, 1.0), 200, 6).unwrap();
    let r = gpe_embeddings_eval(&model, &tuples).unwrap();
    assert!(r.margin > 0.0, "{:?}", r.mean);
    assert!(r.mean.aep < r.mean.aen, "{:?}", r.mean);
}
