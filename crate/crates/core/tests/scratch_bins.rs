//! Temporary: attribute-scalar distribution scan for the renderer.

use a4net::data::synthetic::{generate_synthetic, SyntheticSpec};

#[test]
fn bins() {
    let spec = SyntheticSpec::mini(1600, 77);
    let dir = tempfile::tempdir().unwrap();
    let out = generate_synthetic(&spec, dir.path()).unwrap();
    let mut b = [[f64::MAX, f64::MIN], [f64::MAX, f64::MIN]];
    let mut c = [[f64::MAX, f64::MIN], [f64::MAX, f64::MIN]];
    for r in &out.records {
        let bv = r.brightness.unwrap();
        let cv = r.colorfulness.unwrap();
        let bb = usize::from(bv >= 0.55);
        let cb = usize::from(cv >= 0.10);
        b[bb][0] = b[bb][0].min(bv);
        b[bb][1] = b[bb][1].max(bv);
        c[cb][0] = c[cb][0].min(cv);
        c[cb][1] = c[cb][1].max(cv);
    }
    println!("brightness low  [{:.4}, {:.4}]", b[0][0], b[0][1]);
    println!("brightness high [{:.4}, {:.4}]", b[1][0], b[1][1]);
    println!("colorful  low  [{:.4}, {:.4}]", c[0][0], c[0][1]);
    println!("colorful  high [{:.4}, {:.4}]", c[1][0], c[1][1]);
}
