use residualvit::corpus::{clip_from_bytes, clip_to_bytes, gen_synthetic_corpus};
use residualvit::motion::MotionField;
use residualvit::residual::{FeatureSequence, InterleaveConfig, ResidualTokenizer, ResidualViT};
use residualvit::teacher::{DualEncoder, EncoderConfig};
use residualvit::Error;

fn setup() -> (
    DualEncoder,
    ResidualTokenizer,
    Vec<residualvit::teacher::Frame>,
) {
    let cfg = EncoderConfig::default();
    let model = DualEncoder::new(cfg).unwrap();
    let tok = ResidualTokenizer::init(cfg.feature_dim, cfg.dim, 5);
    let corpus = gen_synthetic_corpus(&cfg, 1, 6, 2).unwrap();
    (model, tok, corpus.videos[0].frames.clone())
}

fn assert_rejects_damage(bytes: &[u8], parse: impl Fn(&[u8]) -> Result<(), Error>) {
    parse(bytes).unwrap();
    assert!(parse(&bytes[..bytes.len() - 1]).is_err(), "truncated");
    let mut extra = bytes.to_vec();
    extra.push(0);
    assert!(parse(&extra).is_err(), "trailing byte");
    let mut magic = bytes.to_vec();
    magic[0] ^= 0xff;
    assert!(parse(&magic).is_err(), "magic");
    let mut version = bytes.to_vec();
    version[4] = 9;
    assert!(parse(&version).is_err(), "version");
}

#[test]
fn weights_round_trip() {
    let (model, _, _) = setup();
    let bytes = model.to_bytes().unwrap();
    let back = DualEncoder::from_bytes(&bytes).unwrap();
    assert_eq!(back.checksum(), model.checksum());
    assert_eq!(back.to_bytes().unwrap(), bytes);
    assert_rejects_damage(&bytes, |b| DualEncoder::from_bytes(b).map(drop));
}

#[test]
fn tokenizer_round_trip() {
    let (_, tok, _) = setup();
    let bytes = tok.to_bytes().unwrap();
    let back = ResidualTokenizer::from_bytes(&bytes).unwrap();
    assert_eq!(back, tok);
    assert_eq!(back.to_bytes().unwrap(), bytes);
    assert_rejects_damage(&bytes, |b| ResidualTokenizer::from_bytes(b).map(drop));
}

#[test]
fn features_round_trip_with_and_without_kinds() {
    let (model, tok, frames) = setup();
    let student = ResidualViT::new(&model, &tok).unwrap();
    let icfg = InterleaveConfig {
        n: 2,
        ..Default::default()
    };
    let seq = student
        .encode_video_interleaved(&frames, &icfg, None)
        .unwrap();
    for with_kinds in [true, false] {
        let bytes = seq.to_bytes(with_kinds).unwrap();
        let back = FeatureSequence::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(with_kinds).unwrap(), bytes);
        if with_kinds {
            assert_eq!(back.kinds, seq.kinds);
            assert_eq!(back.references, seq.references);
        }
        for (a, b) in back.features.iter().zip(&seq.features) {
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() < 1e-6);
            }
        }
        assert_rejects_damage(&bytes, |b| FeatureSequence::from_bytes(b).map(drop));
    }
}

#[test]
fn motion_and_clip_round_trip() {
    let (_, _, frames) = setup();
    let field = MotionField::from_frames(&frames).unwrap();
    let bytes = field.to_bytes().unwrap();
    assert_eq!(
        MotionField::from_bytes(&bytes).unwrap().to_bytes().unwrap(),
        bytes
    );
    assert_rejects_damage(&bytes, |b| MotionField::from_bytes(b).map(drop));

    let bytes = clip_to_bytes(&frames).unwrap();
    let back = clip_from_bytes(&bytes).unwrap();
    assert_eq!(back, frames);
    assert_eq!(clip_to_bytes(&back).unwrap(), bytes);
    assert_rejects_damage(&bytes, |b| clip_from_bytes(b).map(drop));
}

#[test]
fn save_and_load_through_files() {
    let (model, tok, _) = setup();
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("nested/teacher.rvtw");
    model.save(&w).unwrap();
    assert_eq!(DualEncoder::load(&w).unwrap().checksum(), model.checksum());
    let t = dir.path().join("tok.rvta");
    tok.save(&t).unwrap();
    assert_eq!(ResidualTokenizer::load(&t).unwrap(), tok);
    match DualEncoder::load(dir.path().join("missing.rvtw")) {
        Err(e) => assert_eq!(e.exit_code(), 2),
        Ok(_) => panic!("loaded a missing file"),
    }
}
