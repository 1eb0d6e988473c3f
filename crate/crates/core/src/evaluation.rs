//! Quantitative evaluation: the 5-frame STD metric, vector MAE, and a
//! classical block-matching baseline aligner.
//!
//! The baseline (normalized cross-correlation over block-mean A-lines plus
//! a 1-D dynamic program over block shifts) is deliberately minimal. It is
//! an independent oracle for easy cases — it recovers constant integer
//! shifts on structured noiseless frames exactly — not a faithful
//! reproduction of published feature-based correction methods.

use std::fmt::Write as _;
use std::path::Path;

use crate::distortion::DistortionVector;
use crate::error::{Error, Result};
use crate::frames::{BScanFrame, FrameSequence};
use crate::numerics::Real;

/// 5-frame window radius: two frames on each side of the center.
const STD_WINDOW_RADIUS: usize = 2;

/// Per-pixel standard deviation over the 5-frame window centered at `n`,
/// averaged over all pixels. Population (biased) standard deviation.
pub fn std_metric<T: Real>(seq: &FrameSequence<T>, n: usize) -> Result<f64> {
    let f = seq.len();
    if f < 5 {
        return Err(Error::Data(format!(
            "std metric needs at least 5 frames, sequence has {f}"
        )));
    }
    if n < STD_WINDOW_RADIUS || n + STD_WINDOW_RADIUS >= f {
        return Err(Error::Data(format!(
            "window out of range: n must be in [{}, {}], got {n}",
            STD_WINDOW_RADIUS,
            f - STD_WINDOW_RADIUS - 1
        )));
    }
    let (rows, cols) = (seq.n_alines(), seq.n_points());
    let window: Vec<&BScanFrame<T>> = (n - STD_WINDOW_RADIUS..=n + STD_WINDOW_RADIUS)
        .map(|i| seq.frame(i))
        .collect();
    let mut acc = 0.0f64;
    for i in 0..rows {
        for j in 0..cols {
            let mut mean = 0.0f64;
            for frame in &window {
                mean += frame.pixels().get(i, j).to_f64();
            }
            mean /= 5.0;
            let mut var = 0.0f64;
            for frame in &window {
                let d = frame.pixels().get(i, j).to_f64() - mean;
                var += d * d;
            }
            acc += (var / 5.0).sqrt();
        }
    }
    Ok(acc / (rows * cols) as f64)
}

/// The STD metric over every valid center frame. Values start at frame 2
/// and the series length is `F − 4`; the two frames at each edge have no
/// complete window and are simply not reported.
#[derive(Debug, Clone)]
pub struct StdSeries {
    values: Vec<f64>,
}

impl StdSeries {
    /// Center index of the first entry.
    pub const FIRST_FRAME: usize = STD_WINDOW_RADIUS;

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// CSV with header `frame,std`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,std\n");
        for (k, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{},{:.6e}", k + Self::FIRST_FRAME, v);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Minimal standalone SVG: one polyline over a framed plot area with
    /// min/max labels.
    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (640.0f64, 320.0f64, 40.0f64);
        let lo = self.values.iter().copied().fold(f64::MAX, f64::min);
        let hi = self.values.iter().copied().fold(f64::MIN, f64::max);
        let span = (hi - lo).max(1e-12);
        let count = self.values.len().max(2) as f64;
        let mut points = String::new();
        for (k, &v) in self.values.iter().enumerate() {
            let x = pad + (w - 2.0 * pad) * k as f64 / (count - 1.0);
            let y = h - pad - (h - 2.0 * pad) * (v - lo) / span;
            let _ = write!(points, "{x:.2},{y:.2} ");
        }
        format!(
            concat!(
                "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w} {h}\">\n",
                "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
                "<rect x=\"{pad}\" y=\"{pad}\" width=\"{iw}\" height=\"{ih}\" ",
                "fill=\"none\" stroke=\"#888\"/>\n",
                "<polyline fill=\"none\" stroke=\"#1a7f37\" stroke-width=\"1.5\" ",
                "points=\"{points}\"/>\n",
                "<text x=\"4\" y=\"{pad}\" font-size=\"11\">{hi:.4}</text>\n",
                "<text x=\"4\" y=\"{hb}\" font-size=\"11\">{lo:.4}</text>\n",
                "<text x=\"{pad}\" y=\"{tb}\" font-size=\"11\">frame {first}..{last}</text>\n",
                "</svg>\n"
            ),
            w = w,
            h = h,
            pad = pad,
            iw = w - 2.0 * pad,
            ih = h - 2.0 * pad,
            points = points.trim_end(),
            hi = hi,
            lo = lo,
            hb = h - pad,
            tb = h - pad + 16.0,
            first = Self::FIRST_FRAME,
            last = Self::FIRST_FRAME + self.values.len().saturating_sub(1),
        )
    }

    pub fn write_svg(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_svg())?;
        Ok(())
    }
}

/// Compute the STD metric for every valid center frame.
pub fn std_series<T: Real>(seq: &FrameSequence<T>) -> Result<StdSeries> {
    let f = seq.len();
    if f < 5 {
        return Err(Error::Data(format!(
            "std series needs at least 5 frames, sequence has {f}"
        )));
    }
    let values = (STD_WINDOW_RADIUS..f - STD_WINDOW_RADIUS)
        .map(|n| std_metric(seq, n))
        .collect::<Result<Vec<_>>>()?;
    Ok(StdSeries { values })
}

/// Mean absolute difference between two vectors.
pub fn mae_vectors<T: Real>(pred: &DistortionVector<T>, gt: &DistortionVector<T>) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::DimMismatch {
            op: "mae_vectors",
            left: (pred.len(), 1),
            right: (gt.len(), 1),
        });
    }
    Ok(pred
        .shifts()
        .iter()
        .zip(gt.shifts())
        .map(|(&p, &g)| (p.to_f64() - g.to_f64()).abs())
        .sum::<f64>()
        / pred.len() as f64)
}

/// Zero-normalized cross-correlation; 0 when either side has no variance.
fn zncc(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        dot += dx * dy;
        na += dx * dx;
        nb += dy * dy;
    }
    if na < 1e-24 || nb < 1e-24 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Mean A-line of `frame` over `len` circularly consecutive rows starting
/// at `start`.
fn block_mean_aline<T: Real>(frame: &BScanFrame<T>, start: i64, len: usize) -> Vec<f64> {
    let n = frame.n_alines() as i64;
    let m = frame.n_points();
    let mut acc = vec![0.0f64; m];
    for r in 0..len as i64 {
        let row = frame.aline(((start + r).rem_euclid(n)) as usize);
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v.to_f64();
        }
    }
    for a in acc.iter_mut() {
        *a /= len as f64;
    }
    acc
}

/// Classical baseline aligner: estimate the distortion of `cur` relative
/// to `prev` (same convention as the warp: `cur[i] ≈ prev[i + d_i]`).
///
/// A-lines are grouped into blocks of `block` rows. For every block the
/// block-mean A-line of `cur` is compared against the correspondingly
/// shifted block mean of `prev` by normalized cross-correlation over
/// integer shifts in `[-max_shift, max_shift]`. A dynamic program over the
/// circular chain of blocks minimizes `Σ(−NCC) + λ·Σ|s_b − s_{b−1}|`
/// (including the closing term), and the block shifts are broadcast to all
/// A-lines of their block.
pub fn xcorr_align<T: Real>(
    prev: &BScanFrame<T>,
    cur: &BScanFrame<T>,
    max_shift: usize,
    block: usize,
    lambda_dp: f64,
) -> Result<DistortionVector<f32>> {
    let n = prev.n_alines();
    if (cur.n_alines(), cur.n_points()) != (n, prev.n_points()) {
        return Err(Error::DimMismatch {
            op: "xcorr_align",
            left: (n, prev.n_points()),
            right: (cur.n_alines(), cur.n_points()),
        });
    }
    if max_shift == 0 || max_shift > n / 4 {
        return Err(Error::Config(format!(
            "max_shift must be in [1, N/4] = [1, {}], got {max_shift}",
            n / 4
        )));
    }
    if block == 0 || n % block != 0 {
        return Err(Error::Config(format!(
            "block {block} must divide N = {n}"
        )));
    }
    if lambda_dp < 0.0 || !lambda_dp.is_finite() {
        return Err(Error::Config("lambda_dp must be nonnegative".into()));
    }

    let n_blocks = n / block;
    let shifts: Vec<i64> = (-(max_shift as i64)..=max_shift as i64).collect();
    let n_shifts = shifts.len();

    // cost[b][k] = -NCC of cur block b against prev shifted by shifts[k]
    let mut cost = vec![vec![0.0f64; n_shifts]; n_blocks];
    for (b, row) in cost.iter_mut().enumerate() {
        let start = (b * block) as i64;
        let cur_mean = block_mean_aline(cur, start, block);
        for (k, &s) in shifts.iter().enumerate() {
            let prev_mean = block_mean_aline(prev, start + s, block);
            row[k] = -zncc(&cur_mean, &prev_mean);
        }
    }

    // ties resolve toward the smallest |shift| so that identical frames map
    // to the zero vector even without texture
    let prefer = |cand_cost: f64, cand_k: usize, best_cost: f64, best_k: usize| -> bool {
        cand_cost < best_cost
            || (cand_cost == best_cost
                && shifts[cand_k].abs() < shifts[best_k].abs())
    };

    let best_path = if n_blocks == 1 {
        let mut best_k = 0;
        for k in 1..n_shifts {
            if prefer(cost[0][k], k, cost[0][best_k], best_k) {
                best_k = k;
            }
        }
        vec![best_k]
    } else {
        // exact circular DP: anchor the first block's shift, run the chain,
        // close the loop, take the best anchor
        let mut best_total = f64::INFINITY;
        let mut best_path: Vec<usize> = Vec::new();
        for anchor in 0..n_shifts {
            let mut dp = vec![vec![f64::INFINITY; n_shifts]; n_blocks];
            let mut from = vec![vec![0usize; n_shifts]; n_blocks];
            dp[0][anchor] = cost[0][anchor];
            for b in 1..n_blocks {
                for k in 0..n_shifts {
                    let mut best = f64::INFINITY;
                    let mut best_prev = 0usize;
                    for kp in 0..n_shifts {
                        if dp[b - 1][kp].is_infinite() {
                            continue;
                        }
                        let c =
                            dp[b - 1][kp] + lambda_dp * (shifts[k] - shifts[kp]).abs() as f64;
                        if c < best || (c == best && prefer(0.0, kp, 0.0, best_prev)) {
                            best = c;
                            best_prev = kp;
                        }
                    }
                    dp[b][k] = best + cost[b][k];
                    from[b][k] = best_prev;
                }
            }
            for k in 0..n_shifts {
                let closed = dp[n_blocks - 1][k]
                    + lambda_dp * (shifts[k] - shifts[anchor]).abs() as f64;
                let better = closed < best_total
                    || (closed == best_total
                        && !best_path.is_empty()
                        && shifts[k].abs() < shifts[*best_path.last().unwrap()].abs());
                if better {
                    best_total = closed;
                    let mut path = vec![0usize; n_blocks];
                    path[n_blocks - 1] = k;
                    for b in (1..n_blocks).rev() {
                        path[b - 1] = from[b][path[b]];
                    }
                    best_path = path;
                }
            }
        }
        best_path
    };

    let mut out = vec![0.0f32; n];
    for (i, v) in out.iter_mut().enumerate() {
        *v = shifts[best_path[i / block]] as f32;
    }
    DistortionVector::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distortion::warp_frame;
    use crate::frames::{generate_phantom, generate_phantom_sequence, PhantomConfig};
    use crate::numerics::{RngState, Tensor2};

    fn structured() -> PhantomConfig {
        PhantomConfig {
            n_alines: 64,
            n_points: 16,
            n_angular_features: 3,
            feature_contrast: 0.9,
            speckle_strength: 0.0,
            ..PhantomConfig::default()
        }
    }

    #[test]
    fn std_zero_for_identical_frames() {
        let f = generate_phantom(&structured(), &mut RngState::new(1)).unwrap();
        let seq = FrameSequence::new(vec![f.clone(); 5]).unwrap();
        assert_eq!(std_metric(&seq, 2).unwrap(), 0.0);
        let series = std_series(&seq).unwrap();
        assert_eq!(series.len(), 1);
        assert!(series.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn std_single_pixel_hand_case() {
        // one pixel runs {0,0,0,0,1}: popstd = 0.4; everything else constant
        let mk = |v: f32| {
            let mut t = Tensor2::filled(8, 4, 0.25f32);
            t.set(3, 2, v);
            BScanFrame::new(t).unwrap()
        };
        let seq =
            FrameSequence::new(vec![mk(0.0), mk(0.0), mk(0.0), mk(0.0), mk(1.0)]).unwrap();
        let sigma = std_metric(&seq, 2).unwrap();
        let expect = 0.4 / (8.0 * 4.0);
        assert!((sigma - expect).abs() < 1e-9, "sigma {sigma} expect {expect}");
    }

    #[test]
    fn std_invariant_to_global_offset() {
        let cfg = PhantomConfig {
            speckle_strength: 0.4,
            n_alines: 16,
            n_points: 8,
            ..PhantomConfig::default()
        };
        let mut rng = RngState::new(2);
        let frames: Vec<BScanFrame<f32>> = (0..6)
            .map(|_| generate_phantom(&cfg, &mut rng).unwrap())
            .collect();
        let seq = FrameSequence::new(frames.clone()).unwrap();
        let shifted = FrameSequence::new(
            frames
                .iter()
                .map(|f| {
                    BScanFrame::new(f.pixels().map(|v| (v * 0.5) + 0.25)).unwrap()
                })
                .collect(),
        )
        .unwrap();
        // offset alone leaves sigma unchanged; the 0.5 scale halves it
        let a = std_metric(&seq, 2).unwrap();
        let b = std_metric(&shifted, 2).unwrap();
        assert!((b - 0.5 * a).abs() < 1e-7);
    }

    #[test]
    fn std_window_bounds_enforced() {
        let f = generate_phantom(&structured(), &mut RngState::new(3)).unwrap();
        let seq = FrameSequence::new(vec![f.clone(); 6]).unwrap();
        assert!(std_metric(&seq, 1).is_err());
        assert!(std_metric(&seq, 4).is_err());
        assert!(std_metric(&seq, 2).is_ok());
        assert!(std_metric(&seq, 3).is_ok());
        let series = std_series(&seq).unwrap();
        assert_eq!(series.len(), 6 - 4);
    }

    #[test]
    fn mae_hand_cases() {
        let z = DistortionVector::new(vec![0.0f64; 2]).unwrap();
        let v = DistortionVector::new(vec![2.0f64, -2.0]).unwrap();
        assert_eq!(mae_vectors(&z, &v).unwrap(), 2.0);
        assert_eq!(mae_vectors(&v, &v).unwrap(), 0.0);
        // homogeneity
        let a = DistortionVector::new(vec![0.5f64, -1.0, 2.0, 0.0]).unwrap();
        let b = DistortionVector::new(vec![1.0f64, 1.0, -2.0, 0.25]).unwrap();
        let scale = |v: &DistortionVector<f64>, s: f64| {
            DistortionVector::new(v.shifts().iter().map(|x| x * s).collect::<Vec<_>>())
                .unwrap()
        };
        let m = mae_vectors(&a, &b).unwrap();
        let m3 = mae_vectors(&scale(&a, 3.0), &scale(&b, 3.0)).unwrap();
        assert!((m3 - 3.0 * m).abs() < 1e-12);
    }

    #[test]
    fn xcorr_zero_for_identical_frames() {
        let f = generate_phantom(&structured(), &mut RngState::new(4)).unwrap();
        let d = xcorr_align(&f, &f, 8, 8, 0.1).unwrap();
        assert!(d.shifts().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn xcorr_recovers_constant_integer_rolls_exactly() {
        let f = generate_phantom(&structured(), &mut RngState::new(5)).unwrap();
        for k in [-8i64, -3, 1, 5, 8] {
            let d = DistortionVector::constant(64, k as f32).unwrap();
            let cur = warp_frame(&f, &d).unwrap();
            let est = xcorr_align(&f, &cur, 8, 8, 0.1).unwrap();
            assert!(
                est.shifts().iter().all(|&v| v == k as f32),
                "shift {k} not recovered: {:?}",
                est.shifts()
            );
        }
    }

    #[test]
    fn xcorr_huge_lambda_gives_constant_vector() {
        let f = generate_phantom(&structured(), &mut RngState::new(6)).unwrap();
        // non-constant distortion, still smooth
        let d = DistortionVector::from_sinusoids(&[(4.0f32, 1, 0.7)], 64).unwrap();
        let cur = warp_frame(&f, &d).unwrap();
        let est = xcorr_align(&f, &cur, 8, 8, 1e9).unwrap();
        let first = est.get(0);
        assert!(est.shifts().iter().all(|&v| v == first));
    }

    #[test]
    fn xcorr_validates_preconditions() {
        let f = generate_phantom(&structured(), &mut RngState::new(7)).unwrap();
        assert!(xcorr_align(&f, &f, 64, 8, 0.1).is_err()); // > N/4
        assert!(xcorr_align(&f, &f, 8, 7, 0.1).is_err()); // 7 does not divide 64
    }

    #[test]
    fn svg_and_csv_have_expected_shape() {
        let f = generate_phantom(&structured(), &mut RngState::new(8)).unwrap();
        let seq = FrameSequence::new(vec![f.clone(); 7]).unwrap();
        let series = std_series(&seq).unwrap();
        let csv = series.to_csv();
        assert!(csv.starts_with("frame,std\n"));
        assert_eq!(csv.lines().count(), 1 + series.len());
        assert!(csv.lines().nth(1).unwrap().starts_with("2,"));
        let svg = series.to_svg();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("<polyline"));
    }

    #[test]
    fn gt_correction_beats_no_correction() {
        let mut rng = RngState::new(9);
        let seq = generate_phantom_sequence(&structured(), 10, &mut rng).unwrap();
        // inject an independent smooth distortion into each frame
        let gen = crate::distortion::DistortionGenConfig {
            n_components: 2,
            max_frequency: 3,
            max_amplitude: 4.0,
            enforce_monotone: false,
        };
        let mut gts = Vec::new();
        let distorted: Vec<BScanFrame<f32>> = seq
            .iter()
            .map(|f| {
                let gt = crate::distortion::generate_gt_vector(&gen, 64, &mut rng).unwrap();
                let out = warp_frame(f, &gt).unwrap();
                gts.push(gt);
                out
            })
            .collect();
        let distorted_seq = FrameSequence::new(distorted.clone()).unwrap();
        let corrected: Vec<BScanFrame<f32>> = distorted
            .iter()
            .zip(&gts)
            .map(|(f, gt)| crate::distortion::correct_frame(f, gt).unwrap())
            .collect();
        let corrected_seq = FrameSequence::new(corrected).unwrap();
        let sigma_raw = std_series(&distorted_seq).unwrap().mean();
        let sigma_fixed = std_series(&corrected_seq).unwrap().mean();
        assert!(
            sigma_fixed < 0.5 * sigma_raw,
            "GT correction sigma {sigma_fixed} not below half of uncorrected {sigma_raw}"
        );
    }
}
