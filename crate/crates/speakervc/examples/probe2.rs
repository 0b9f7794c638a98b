use speakervc::audio::{invert_mel, mel_spectrogram, voiced_fraction, MelConfig};
use speakervc::testsig::voiced_vowel;

fn main() {
    let cfg = MelConfig::decoder();
    for f0 in [100.0, 125.0, 150.0, 175.0, 200.0, 250.0, 300.0] {
        let w = voiced_vowel(f0, 1.2, 24000, 1);
        let mel = mel_spectrogram(&w, &cfg).unwrap();
        let out = invert_mel(&mel, 32).unwrap();
        println!("f0 {f0:5.0}: original frac {:.2}, GL frac {:.2}",
            voiced_fraction(&w, 0.3), voiced_fraction(&out, 0.3));
    }
}
