use speakervc::adaptor::{train_mel_adaptor, MelAdaptorModel};
use speakervc::audio::{voiced_fraction, MelConfig};
use speakervc::data::{generate_toy_corpus, whisper_augment, Manifest};
use speakervc::decoder::{
    convert, prepare_training_set, train_stage, DecoderConfig, DecoderModel, DecoderVariant,
    TrainPlan, VcSystem,
};
use speakervc::speaker::train_speaker_encoder;
use speakervc::units::{extract_frontend, fit_kmeans, train_unit_projection};
use speakervc::audio::load_wav;
use std::time::Instant;

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let m = generate_toy_corpus(10, 8, 17, dir.path().join("v")).unwrap();
    let wm = whisper_augment(&m, dir.path().join("w")).unwrap();
    let mut all = m.records.clone();
    all.extend(wm.records.clone());
    let full = Manifest::new(all).unwrap();
    println!("corpus {:.1}s ({} records)", t.elapsed().as_secs_f64(), full.len());

    let t = Instant::now();
    let feats: Vec<_> = m.records.iter().map(|r| extract_frontend(&load_wav(&r.path).unwrap()).unwrap()).collect();
    let wfeats: Vec<_> = wm.records.iter().map(|r| extract_frontend(&load_wav(&r.path).unwrap()).unwrap()).collect();
    let (cb, _) = fit_kmeans(&feats, 32, 1).unwrap();
    let unit_seqs: Vec<Vec<u32>> = feats.iter().map(|f| speakervc::units::assign_units(f, &cb).unwrap()).collect();
    let pairs: Vec<_> = feats.iter().zip(&unit_seqs).map(|(f, u)| (f, u.as_slice())).collect();
    let (proj, plog) = train_unit_projection(&pairs, 32, 15, 2).unwrap();
    println!("units {:.1}s (acc {:.3})", t.elapsed().as_secs_f64(), plog.accuracy_per_epoch.last().unwrap());
    // voiced vs whisper unit agreement on parallel utterances
    let mut agree = 0usize; let mut total = 0usize;
    for (fv, fw) in feats.iter().zip(&wfeats) {
        let uv = speakervc::units::extract_soft_units(fv, &proj, &cb).unwrap();
        let uw = speakervc::units::extract_soft_units(fw, &proj, &cb).unwrap();
        let n = uv.n_frames().min(uw.n_frames());
        for t in 0..n {
            let av = uv.logits.row(t).iter().enumerate().max_by(|a,b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
            let aw = uw.logits.row(t).iter().enumerate().max_by(|a,b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
            if av == aw { agree += 1; }
            total += 1;
        }
    }
    println!("voiced-vs-whisper argmax agreement: {:.3}", agree as f64 / total as f64);

    let t = Instant::now();
    let (spk, slog) = train_speaker_encoder(&m, 24, 3).unwrap();
    println!("spk enc {:.1}s (acc {:.3})", t.elapsed().as_secs_f64(), slog.accuracy_per_epoch.last().unwrap());

    let t = Instant::now();
    let (adaptor, _) = train_mel_adaptor(&m, &MelConfig::decoder(), &MelConfig::speaker(), 10, 4).unwrap();
    println!("adaptor {:.1}s", t.elapsed().as_secs_f64());

    let t = Instant::now();
    let set = prepare_training_set(&full, &cb, &proj, &spk).unwrap();
    println!("prep {:.1}s ({} items)", t.elapsed().as_secs_f64(), set.items.len());

    let mut dec = DecoderModel::seeded(DecoderConfig::new(DecoderVariant::SpeakerVc, 32), 5);
    let mut adaptor = adaptor;
    let mut spk_mut = spk;
    let t = Instant::now();
    let s1 = train_stage(&mut dec, &TrainPlan::stage1(18, 11), &set, &mut adaptor, &mut spk_mut).unwrap();
    println!("stage1 {:.1}s: l1 {:.4} -> {:.4}", t.elapsed().as_secs_f64(), s1[0].l1, s1.last().unwrap().l1);
    let t = Instant::now();
    let s2 = train_stage(&mut dec, &TrainPlan::stage2(14, 12), &set, &mut adaptor, &mut spk_mut).unwrap();
    println!("stage2 {:.1}s: pitch {:.4} -> {:.4} energy {:.4} -> {:.4}", t.elapsed().as_secs_f64(), s2[0].pitch, s2.last().unwrap().pitch, s2[0].energy, s2.last().unwrap().energy);
    let t = Instant::now();
    let s3 = train_stage(&mut dec, &TrainPlan::stage3(6, 13, 1.0), &set, &mut adaptor, &mut spk_mut).unwrap();
    println!("stage3 {:.1}s: l1 {:.4} sl {:.4} -> l1 {:.4} sl {:.4}", t.elapsed().as_secs_f64(), s3[0].l1, s3[0].sl, s3.last().unwrap().l1, s3.last().unwrap().sl);

    let sys = VcSystem { codebook: cb, projection: proj, spk_encoder: spk_mut, adaptor, decoder: dec, gl_iterations: 24 };
    let src = load_wav(&wm.records[0].path).unwrap();
    let refw = load_wav(&m.records[9].path).unwrap();
    let t = Instant::now();
    let out = convert(&sys, &src, &refw).unwrap();
    println!("convert {:.1}s: src {:.2}s -> out {:.2}s, voiced frac {:.2}",
        t.elapsed().as_secs_f64(), src.duration_s(), out.duration_s(), voiced_fraction(&out, 0.3));

    // diagnosis: predicted pitch stats
    let units = sys.source_units(&src).unwrap();
    let (spk_c, style_c) = sys.reference_conditioning(&refw).unwrap();
    let pred = sys.decoder.predict_prosody(&units, spk_c.as_ref(), style_c.as_ref()).unwrap();
    let voiced_pred = pred.pitch.iter().filter(|&&v| v > 0.0).count();
    let mean_nonzero: f32 = pred.pitch.iter().filter(|&&v| v > 0.0).sum::<f32>() / voiced_pred.max(1) as f32;
    println!("predicted pitch: {}/{} voiced frames, mean logf0 {:.2}", voiced_pred, pred.pitch.len(), mean_nonzero);

    // teacher prosody from the voiced sibling
    let sib = load_wav(&m.records[0].path).unwrap();
    let teacher = speakervc::decoder::extract_prosody_targets(&sib, &MelConfig::decoder()).unwrap();
    let n = units.n_frames().min(teacher.len());
    let units_n = speakervc::units::SoftUnits {
        logits: speakervc::nn::Mat::from_vec(n, units.logits.cols, units.logits.data[..n*units.logits.cols].to_vec()),
        discrete: units.discrete[..n].to_vec(),
    };
    let teacher_n = teacher.slice(0, n);
    println!("teacher voiced frac: {:.2}", teacher_n.voiced_fraction());
    let mel = sys.decoder.infer(&units_n, spk_c.as_ref(), style_c.as_ref(), Some(&teacher_n)).unwrap();
    let wave = speakervc::audio::invert_mel(&mel, 24).unwrap();
    println!("teacher-prosody conversion voiced frac: {:.2}", voiced_fraction(&wave, 0.3));

    let mel_pred = sys.decoder.infer(&units_n, spk_c.as_ref(), style_c.as_ref(), Some(&pred.slice(0, n))).unwrap();
    let band = |m: &speakervc::audio::MelSpectrogram, t: usize| -> String {
        m.frame(t)[..24].iter().map(|v| format!("{:+.0}", v)).collect::<Vec<_>>().join(" ")
    };
    println!("teacher mel t=112: {}", band(&mel, 112));
    println!("pred    mel t=112: {}", band(&mel_pred, 112));
    let wave_pred = speakervc::audio::invert_mel(&mel_pred, 24).unwrap();
    println!("pred-mel inversion voiced frac: {:.2}", voiced_fraction(&wave_pred, 0.3));
    // same but teacher pitch,예 predicted energy
    let mut hybrid = pred.slice(0, n);
    hybrid.pitch = teacher_n.pitch.clone();
    let mel_h = sys.decoder.infer(&units_n, spk_c.as_ref(), style_c.as_ref(), Some(&hybrid)).unwrap();
    let wave_h = speakervc::audio::invert_mel(&mel_h, 24).unwrap();
    println!("teacher-pitch+pred-energy voiced frac: {:.2}", voiced_fraction(&wave_h, 0.3));
    // teacher flags, constant predicted value
    let mut hybrid2 = pred.slice(0, n);
    hybrid2.pitch = teacher_n.pitch.iter().map(|&p| if p > 0.0 { 4.82 } else { 0.0 }).collect();
    let mel2 = sys.decoder.infer(&units_n, spk_c.as_ref(), style_c.as_ref(), Some(&hybrid2)).unwrap();
    let w2 = speakervc::audio::invert_mel(&mel2, 24).unwrap();
    println!("teacher-flags+const-4.82 voiced frac: {:.2}", voiced_fraction(&w2, 0.3));
    // teacher flags, constant 5.0
    let mut hybrid3 = pred.slice(0, n);
    hybrid3.pitch = teacher_n.pitch.iter().map(|&p| if p > 0.0 { 5.0 } else { 0.0 }).collect();
    let mel3 = sys.decoder.infer(&units_n, spk_c.as_ref(), style_c.as_ref(), Some(&hybrid3)).unwrap();
    let w3 = speakervc::audio::invert_mel(&mel3, 24).unwrap();
    println!("teacher-flags+const-5.0 voiced frac: {:.2}", voiced_fraction(&w3, 0.3));
    // predicted flags, teacher-like value 4.97 everywhere voiced
    let mut hybrid4 = pred.slice(0, n);
    hybrid4.pitch = pred.pitch[..n].iter().map(|&p| if p > 0.0 { 4.97 } else { 0.0 }).collect();
    let mel4 = sys.decoder.infer(&units_n, spk_c.as_ref(), style_c.as_ref(), Some(&hybrid4)).unwrap();
    let w4 = speakervc::audio::invert_mel(&mel4, 24).unwrap();
    println!("pred-flags+const-4.97 voiced frac: {:.2}", voiced_fraction(&w4, 0.3));
}
