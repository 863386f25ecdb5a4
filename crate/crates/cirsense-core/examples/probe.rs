// temporary probe
use cirsense_core::{PartialDftOperator, SystemConfig};

fn main() {
    let cfg = SystemConfig::default_160mhz();
    let op = PartialDftOperator::new(&cfg).unwrap();
    let ts = cfg.sample_interval_s;
    println!("cond = {:.3e}, ident_err = {:.3e}", op.condition(), op.identity_error());
    for tap in [-20i32, -10, -5, -1, 0, 1, 2, 3, 5, 8, 12, 20, 30, 40, 49, 50] {
        // golden-section max of pulse_gain(tap, (tap + r) * ts) over r in [-0.4, 0.4]
        let f = |r: f64| op.pulse_gain(tap, (tap as f64 + r) * ts);
        let (mut a, mut b) = (-0.4f64, 0.4f64);
        let phi = 0.618_033_988_749_894_9_f64;
        let (mut x1, mut x2) = (b - phi * (b - a), a + phi * (b - a));
        let (mut f1, mut f2) = (f(x1), f(x2));
        for _ in 0..120 {
            if f1 < f2 { a = x1; x1 = x2; f1 = f2; x2 = a + phi * (b - a); f2 = f(x2); }
            else { b = x2; x2 = x1; f2 = f1; x1 = b - phi * (b - a); f1 = f(x1); }
        }
        let r = 0.5 * (a + b);
        println!("tap {tap:>3}: peak offset {r:+.6} taps, p(peak) = {:.9}, p(0) = {:.9}", f(r), f(0.0));
    }
}
