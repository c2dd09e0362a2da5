use beamtrain::channel::*;
use beamtrain::codebook::*;
use beamtrain::training::*;
use nalgebra::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type C64 = Complex<f64>;
type CMat = nalgebra::DMatrix<C64>;

fn jacobi_dbg(a: &CMat) {
    let (rows, cols) = a.shape();
    let mut w = a.clone();
    let mut v = CMat::identity(cols, cols);
    for sweep in 0..64 {
        let mut off: f64 = 0.0;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let col_p = w.column(p);
                let col_q = w.column(q);
                let app = col_p.norm_squared();
                let aqq = col_q.norm_squared();
                let apq: C64 = col_p.dotc(&col_q);
                let r = apq.norm();
                if app == 0.0 || aqq == 0.0 || r == 0.0 { continue; }
                let rel = r * r / (app * aqq);
                off = off.max(rel);
                if rel <= 1e-28 { continue; }
                let phase = apq / C64::new(r, 0.0);
                let zeta = (app - aqq) / (2.0 * r);
                let t = if zeta == 0.0 { 1.0 } else { -zeta.signum() / (zeta.abs() + (1.0 + zeta*zeta).sqrt()) };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let cs = C64::new(c, 0.0);
                let sn = C64::new(s, 0.0);
                let pc = phase.conj();
                for i in 0..rows {
                    let wp = w[(i, p)];
                    let wq = w[(i, q)] * pc;
                    w[(i, p)] = cs * wp - sn * wq;
                    w[(i, q)] = sn * wp + cs * wq;
                }
                for i in 0..cols {
                    let vp = v[(i, p)];
                    let vq = v[(i, q)] * pc;
                    v[(i, p)] = cs * vp - sn * vq;
                    v[(i, q)] = sn * vp + cs * vq;
                }
                if w.iter().any(|c| c.re.is_nan() || c.im.is_nan()) {
                    println!("NaN at sweep {sweep} pair ({p},{q}): app={app:e} aqq={aqq:e} r={r:e} zeta={zeta:e} t={t} rel={rel:e}");
                    return;
                }
            }
        }
        println!("sweep {sweep}: off = {off:e}");
        if off <= 1e-28 { break; }
    }
    println!("done, col norms: {:?}", (0..cols).map(|j| w.column(j).norm()).collect::<Vec<_>>());
}

fn main() {
    let aux = UpaGeometry::new(4, 4);
    let sched = default_aux_schedule(&aux, &aux, 4, 4).unwrap();
    let grid = make_grid(8, 8).unwrap();
    let aoa = grid.point(19).unwrap();
    let aod = grid.point(44).unwrap();
    let re = ChannelRealization {
        paths: vec![PathParams { gain: C64::new(0.7, -0.2), aoa, aod, kind: PathKind::Los }],
        tx_geom: aux, rx_geom: aux,
    };
    let h_s = re.matrix().unwrap();
    let y = simulate_aux_rx(&h_s, &sched, 0.0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    jacobi_dbg(&y);
}
