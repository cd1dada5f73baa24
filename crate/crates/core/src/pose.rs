//! Robust pose estimation from 2D-3D matches: pinhole projection, a
//! Grunert-style P3P minimal solver, a seeded RANSAC loop with adaptive
//! termination, and Gauss-Newton refinement on the inlier set.
//!
//! The minimal solver follows Grunert's classical formulation (as surveyed
//! by Haralick et al., "Review and analysis of solutions of the three point
//! perspective pose estimation problem", IJCV 1994): the three law-of-cosine
//! constraints between camera-ray depths reduce to a quartic in the depth
//! ratio `v = s3/s1`, each admissible root is polished by a few Gauss-Newton
//! steps on the depth residuals, and the camera-frame triangle is aligned to
//! the world triangle with an orthonormal-triad absolute orientation.

use nalgebra::{DMatrix, Matrix3, UnitQuaternion, Vector3, Vector6};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{CameraIntrinsics, MatchSet, Pose};

/// Pinhole projection of world point `x` into pixels.
///
/// `x` is mapped to camera coordinates `y = R x + t` and must lie in front
/// of the camera (`y.z > 1e-9`).
pub fn project(pose: &Pose, k: &CameraIntrinsics, x: &Vector3<f64>) -> Result<[f64; 2]> {
    let y = pose.transform(x);
    if y.z <= 1e-9 {
        return Err(Error::BehindCamera { z: y.z });
    }
    Ok([k.fx * y.x / y.z + k.cx, k.fy * y.y / y.z + k.cy])
}

/// Squared reprojection error in pixels, `f64::INFINITY` behind the camera.
fn reproj_error_sq(pose: &Pose, k: &CameraIntrinsics, x: &Vector3<f64>, kp: [f64; 2]) -> f64 {
    match project(pose, k, x) {
        Ok([u, v]) => {
            let du = u - kp[0];
            let dv = v - kp[1];
            du * du + dv * dv
        }
        Err(_) => f64::INFINITY,
    }
}

/// Real roots of a polynomial given by coefficients in descending degree
/// order, via the companion-matrix eigenvalues, each polished with a few
/// Newton steps. Near-zero leading coefficients are trimmed first.
fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let max_mag = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if max_mag == 0.0 {
        return Vec::new();
    }
    let mut cs: &[f64] = coeffs;
    while cs.len() > 1 && cs[0].abs() <= 1e-12 * max_mag {
        cs = &cs[1..];
    }
    let n = cs.len() - 1;
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![-cs[1] / cs[0]];
    }
    let mut companion = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        companion[(0, i)] = -cs[i + 1] / cs[0];
    }
    for i in 1..n {
        companion[(i, i - 1)] = 1.0;
    }
    let eig = companion.complex_eigenvalues();
    let eval = |x: f64| -> (f64, f64) {
        // Horner for p(x) and p'(x)
        let mut p = 0.0;
        let mut dp = 0.0;
        for &c in cs {
            dp = dp * x + p;
            p = p * x + c;
        }
        (p, dp)
    };
    let mut roots = Vec::new();
    for z in eig.iter() {
        if z.im.abs() > 1e-6 * (1.0 + z.re.abs()) {
            continue;
        }
        let mut x = z.re;
        for _ in 0..3 {
            let (p, dp) = eval(x);
            if dp.abs() > 1e-300 {
                let step = p / dp;
                if step.is_finite() {
                    x -= step;
                }
            }
        }
        if x.is_finite() {
            roots.push(x);
        }
    }
    roots
}

/// Orthonormal frame spanned by a triangle: columns are the unit edge
/// `P2-P1`, the in-plane normal completion, and the plane normal. `None`
/// when the points are (near-)collinear.
fn triangle_frame(p1: &Vector3<f64>, p2: &Vector3<f64>, p3: &Vector3<f64>) -> Option<Matrix3<f64>> {
    let d1 = p2 - p1;
    let d2 = p3 - p1;
    let n = d1.cross(&d2);
    let n1 = d1.norm();
    let nn = n.norm();
    if n1 <= 1e-12 || nn <= 1e-12 * n1 * d2.norm().max(1e-300) {
        return None;
    }
    let e1 = d1 / n1;
    let e3 = n / nn;
    let e2 = e3.cross(&e1);
    Some(Matrix3::from_columns(&[e1, e2, e3]))
}

/// Solve the perspective-3-point problem: camera poses (world-to-camera)
/// under which the three world points project to the three pixels.
///
/// Up to four solutions, sorted by their depth triple; every returned pose
/// reprojects the inputs within 1e-4 px (candidates that fail this are
/// spurious quartic roots and are dropped).
pub fn p3p_solve(
    world: &[Vector3<f64>; 3],
    pixels: &[[f64; 2]; 3],
    k: &CameraIntrinsics,
) -> Result<Vec<Pose>> {
    // collinearity: triangle area relative to the squared longest side
    let d12 = world[1] - world[0];
    let d13 = world[2] - world[0];
    let d23 = world[2] - world[1];
    let area = 0.5 * d12.cross(&d13).norm();
    let scale_sq = d12.norm_squared().max(d13.norm_squared()).max(d23.norm_squared());
    if area <= 1e-9 * scale_sq {
        return Err(Error::DegenerateConfiguration {
            reason: "collinear world points",
        });
    }

    // unit bearing vectors through the pixels
    let bearing = |p: [f64; 2]| {
        Vector3::new((p[0] - k.cx) / k.fx, (p[1] - k.cy) / k.fy, 1.0).normalize()
    };
    let f1 = bearing(pixels[0]);
    let f2 = bearing(pixels[1]);
    let f3 = bearing(pixels[2]);
    let ca = f2.dot(&f3); // angle opposite side a = |X2 X3|
    let cb = f1.dot(&f3); // angle opposite side b = |X1 X3|
    let cg = f1.dot(&f2); // angle opposite side c = |X1 X2|
    if ca.abs() >= 1.0 - 1e-12 || cb.abs() >= 1.0 - 1e-12 || cg.abs() >= 1.0 - 1e-12 {
        return Err(Error::DegenerateConfiguration {
            reason: "coincident or antipodal bearing rays",
        });
    }

    let a_sq = d23.norm_squared();
    let b_sq = d13.norm_squared();
    let c_sq = d12.norm_squared();
    let a = a_sq / b_sq;
    let c = c_sq / b_sq;

    // quartic in v = s3/s1 from eliminating u = s2/s1
    let ca2 = ca * ca;
    let cb2 = cb * cb;
    let cg2 = cg * cg;
    let a4 = a * a - 2.0 * a * c - 2.0 * a + c * c - 4.0 * c * ca2 + 2.0 * c + 1.0;
    let a3 = -4.0
        * (a * a * cb - 2.0 * a * c * cb - a * ca * cg - a * cb + c * c * cb
            - 2.0 * c * ca2 * cb
            - c * ca * cg
            + c * cb
            + ca * cg);
    let a2 = 2.0
        * (2.0 * a * a * cb2 + a * a - 4.0 * a * c * cb2 - 2.0 * a * c
            - 4.0 * a * ca * cb * cg
            - 2.0 * a * cg2
            + 2.0 * c * c * cb2
            + c * c
            - 2.0 * c * ca2
            - 4.0 * c * ca * cb * cg
            + 2.0 * ca2
            + 2.0 * cg2
            - 1.0);
    let a1 = -4.0
        * (a * a * cb - 2.0 * a * c * cb - a * ca * cg - 2.0 * a * cb * cg2 + a * cb
            + c * c * cb
            - c * ca * cg
            - c * cb
            + ca * cg);
    let a0 = a * a - 2.0 * a * c - 4.0 * a * cg2 + 2.0 * a + c * c - 2.0 * c + 1.0;

    let mut depth_triples: Vec<[f64; 3]> = Vec::new();
    let mut push_triple = |s: [f64; 3]| {
        if s.iter().all(|&x| x.is_finite() && x > 0.0)
            && !depth_triples
                .iter()
                .any(|t| (0..3).all(|i| (t[i] - s[i]).abs() <= 1e-9 * s[i].max(1.0)))
        {
            depth_triples.push(s);
        }
    };

    for v in real_roots(&[a4, a3, a2, a1, a0]) {
        if v.is_nan() || v <= 0.0 {
            continue;
        }
        let q = 1.0 + v * v - 2.0 * v * cb;
        if q <= 1e-15 {
            continue;
        }
        let s1 = (b_sq / q).sqrt();
        // u from the P1 - P2 linear combination, PLUS both roots of the
        // quadratic u^2 - 2 u cg + (1 - C q) = 0 from the third constraint.
        // Near double roots of the quartic the linear denominator collapses
        // and its u is garbage, so the quadratic candidates are not a mere
        // fallback; spurious extras are removed by the depth refinement,
        // the triple dedupe and the reprojection filter.
        let denom = 2.0 * (cg - v * ca);
        let mut u_candidates: Vec<f64> = Vec::new();
        let u_lin = (1.0 - v * v + (a - c) * q) / denom;
        if denom.abs() > 1e-9 && u_lin.is_finite() {
            u_candidates.push(u_lin);
        }
        let disc = cg2 - (1.0 - c * q);
        if disc >= 0.0 {
            let r = disc.sqrt();
            u_candidates.push(cg + r);
            u_candidates.push(cg - r);
        }
        for u in u_candidates {
            if u.is_nan() || u <= 0.0 {
                continue;
            }
            let mut s = [s1, u * s1, v * s1];
            refine_depths(&mut s, ca, cb, cg, a_sq, b_sq, c_sq);
            push_triple(s);
        }
    }

    // deterministic candidate order
    depth_triples.sort_by(|x, y| {
        x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal)
    });

    let fw = triangle_frame(&world[0], &world[1], &world[2])
        .expect("collinearity was checked above");
    let mut poses = Vec::new();
    for s in depth_triples {
        let y1 = f1 * s[0];
        let y2 = f2 * s[1];
        let y3 = f3 * s[2];
        let Some(fc) = triangle_frame(&y1, &y2, &y3) else {
            continue;
        };
        let r = fc * fw.transpose();
        let Ok(rot) = Pose::from_matrix(&r, Vector3::zeros()) else {
            continue;
        };
        let t = y1 - rot.rotation_matrix() * world[0];
        let pose = Pose::new(rot.rotation(), t);
        // spurious roots don't interpolate the three inputs
        let max_err = (0..3)
            .map(|i| reproj_error_sq(&pose, k, &world[i], pixels[i]).sqrt())
            .fold(0.0f64, f64::max);
        if max_err <= 1e-4 {
            poses.push(pose);
        }
    }
    Ok(poses)
}

/// Gauss-Newton on the three law-of-cosines residuals over the depths.
fn refine_depths(s: &mut [f64; 3], ca: f64, cb: f64, cg: f64, a_sq: f64, b_sq: f64, c_sq: f64) {
    for _ in 0..8 {
        let (s1, s2, s3) = (s[0], s[1], s[2]);
        let r = Vector3::new(
            s2 * s2 + s3 * s3 - 2.0 * s2 * s3 * ca - a_sq,
            s1 * s1 + s3 * s3 - 2.0 * s1 * s3 * cb - b_sq,
            s1 * s1 + s2 * s2 - 2.0 * s1 * s2 * cg - c_sq,
        );
        let j = Matrix3::new(
            0.0,
            2.0 * s2 - 2.0 * s3 * ca,
            2.0 * s3 - 2.0 * s2 * ca,
            2.0 * s1 - 2.0 * s3 * cb,
            0.0,
            2.0 * s3 - 2.0 * s1 * cb,
            2.0 * s1 - 2.0 * s2 * cg,
            2.0 * s2 - 2.0 * s1 * cg,
            0.0,
        );
        let Some(delta) = j.lu().solve(&(-r)) else {
            return;
        };
        s[0] += delta[0];
        s[1] += delta[1];
        s[2] += delta[2];
        if delta.norm() < 1e-14 * (s[0].abs() + s[1].abs() + s[2].abs()).max(1.0) {
            return;
        }
    }
}

/// RANSAC parameters. Defaults suit large outdoor scenes; every field has a
/// CLI flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    /// Inlier gate on reprojection error, pixels (strictly less-than).
    pub reproj_threshold_px: f64,
    pub max_iterations: usize,
    /// Target probability of having sampled one all-inlier triple.
    pub confidence: f64,
    /// Minimum inliers for a pose to count as a success.
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            reproj_threshold_px: 12.0,
            max_iterations: 10_000,
            confidence: 0.9999,
            min_inliers: 8,
            seed: 0,
        }
    }
}

/// Outcome of [`ransac_pnp`]. `success == false` results still carry the
/// best pose found (or identity when no sample ever produced a candidate)
/// for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseResult {
    pub pose: Pose,
    /// Per-match inlier flag under the final pose.
    pub inlier_mask: Vec<bool>,
    pub num_inliers: usize,
    pub iterations_run: usize,
    pub success: bool,
}

fn count_inliers(
    pose: &Pose,
    k: &CameraIntrinsics,
    pts: &[Vector3<f64>],
    kps: &[[f64; 2]],
    thresh_sq: f64,
) -> (Vec<bool>, usize, f64) {
    let mut mask = vec![false; pts.len()];
    let mut count = 0;
    let mut sse = 0.0;
    for i in 0..pts.len() {
        let e = reproj_error_sq(pose, k, &pts[i], kps[i]);
        if e < thresh_sq {
            mask[i] = true;
            count += 1;
            sse += e;
        }
    }
    (mask, count, sse)
}

/// Estimate a camera pose from `matches` with P3P-RANSAC and refine it on
/// the consensus set.
///
/// Deterministic for a fixed seed. Iterations terminate adaptively once
/// `ceil(log(1-confidence) / log(1-w^3))` samples have been drawn, where
/// `w` is the best inlier ratio so far. Degenerate samples (collinear
/// triples, coincident rays) are skipped without counting toward
/// termination, up to a hard cap of `10 * max_iterations` attempts.
pub fn ransac_pnp(matches: &MatchSet, k: &CameraIntrinsics, cfg: &RansacConfig) -> Result<PoseResult> {
    use rand::SeedableRng;
    assert!(cfg.reproj_threshold_px > 0.0, "reprojection threshold must be positive");
    assert!(
        cfg.confidence > 0.0 && cfg.confidence < 1.0,
        "confidence must lie in (0,1)"
    );
    let n = matches.len();
    if n < 3 {
        return Err(Error::TooFewMatches { got: n });
    }
    let pts: Vec<Vector3<f64>> = matches
        .matches
        .iter()
        .map(|m| m.point_coord.map(|v| v as f64))
        .collect();
    let kps: Vec<[f64; 2]> = matches
        .matches
        .iter()
        .map(|m| [m.query_keypoint[0] as f64, m.query_keypoint[1] as f64])
        .collect();
    let thresh_sq = cfg.reproj_threshold_px * cfg.reproj_threshold_px;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Pose, usize, f64)> = None;
    let mut required = cfg.max_iterations;
    let mut iterations = 0usize;
    let mut attempts = 0usize;
    let attempt_cap = cfg.max_iterations.saturating_mul(10);

    while iterations < required && attempts < attempt_cap {
        attempts += 1;
        // three distinct indices
        let i0 = rng.gen_range(0..n);
        let mut i1 = rng.gen_range(0..n);
        while i1 == i0 {
            i1 = rng.gen_range(0..n);
        }
        let mut i2 = rng.gen_range(0..n);
        while i2 == i0 || i2 == i1 {
            i2 = rng.gen_range(0..n);
        }
        let world = [pts[i0], pts[i1], pts[i2]];
        let pixels = [kps[i0], kps[i1], kps[i2]];
        let candidates = match p3p_solve(&world, &pixels, k) {
            Ok(c) if !c.is_empty() => c,
            // degenerate or unsolvable sample: skip, uncounted
            _ => continue,
        };
        iterations += 1;
        for cand in candidates {
            let (_, count, sse) = count_inliers(&cand, k, &pts, &kps, thresh_sq);
            let better = match &best {
                None => count > 0,
                Some((_, bc, bs)) => count > *bc || (count == *bc && sse < *bs),
            };
            if better {
                best = Some((cand, count, sse));
                let w = count as f64 / n as f64;
                let p_fail = 1.0 - w * w * w;
                required = if p_fail <= 0.0 {
                    iterations // certain: stop after this round
                } else if p_fail >= 1.0 {
                    cfg.max_iterations
                } else {
                    let need = ((1.0 - cfg.confidence).ln() / p_fail.ln()).ceil();
                    (need as usize).clamp(1, cfg.max_iterations)
                };
            }
        }
    }

    let Some((best_pose, best_count, _)) = best else {
        return Ok(PoseResult {
            pose: Pose::identity(),
            inlier_mask: vec![false; n],
            num_inliers: 0,
            iterations_run: iterations,
            success: false,
        });
    };

    if best_count < cfg.min_inliers {
        let (mask, count, _) = count_inliers(&best_pose, k, &pts, &kps, thresh_sq);
        return Ok(PoseResult {
            pose: best_pose,
            inlier_mask: mask,
            num_inliers: count,
            iterations_run: iterations,
            success: false,
        });
    }

    // refine on the consensus set, then recompute the mask under the final
    // pose so the returned inliers are exactly those the pose explains
    let (mask, _, _) = count_inliers(&best_pose, k, &pts, &kps, thresh_sq);
    let inl_pts: Vec<Vector3<f64>> = (0..n).filter(|&i| mask[i]).map(|i| pts[i]).collect();
    let inl_kps: Vec<[f64; 2]> = (0..n).filter(|&i| mask[i]).map(|i| kps[i]).collect();
    let refined = refine_pose(&best_pose, k, &inl_pts, &inl_kps);
    let (mask, count, _) = count_inliers(&refined, k, &pts, &kps, thresh_sq);
    Ok(PoseResult {
        pose: refined,
        inlier_mask: mask,
        num_inliers: count,
        iterations_run: iterations,
        success: count >= cfg.min_inliers,
    })
}

fn total_cost(pose: &Pose, k: &CameraIntrinsics, pts: &[Vector3<f64>], kps: &[[f64; 2]]) -> f64 {
    let mut c = 0.0;
    for i in 0..pts.len() {
        let e = reproj_error_sq(pose, k, &pts[i], kps[i]);
        if !e.is_finite() {
            return f64::INFINITY;
        }
        c += e;
    }
    c
}

/// Gauss-Newton refinement of `pose` on fixed correspondences, minimizing
/// the sum of squared reprojection errors.
///
/// The 6-dof update is a left-multiplied rotation increment `exp(w)` plus a
/// translation increment. Steps that would increase the cost are halved up
/// to 10 times and the iteration stops when no progress remains, so the
/// returned cost never exceeds the input cost. At most 20 iterations, or
/// until the update norm drops below 1e-8.
pub fn refine_pose(
    pose: &Pose,
    k: &CameraIntrinsics,
    pts: &[Vector3<f64>],
    kps: &[[f64; 2]],
) -> Pose {
    if pts.is_empty() {
        return *pose;
    }
    let mut current = *pose;
    let mut cost = total_cost(&current, k, pts, kps);
    if !cost.is_finite() {
        return current;
    }
    for _ in 0..20 {
        // assemble normal equations H d = -g
        let r = current.rotation_matrix();
        let t = current.translation();
        let mut h = nalgebra::Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for i in 0..pts.len() {
            let y = r * pts[i] + t;
            if y.z <= 1e-9 {
                continue;
            }
            let iz = 1.0 / y.z;
            let res_u = k.fx * y.x * iz + k.cx - kps[i][0];
            let res_v = k.fy * y.y * iz + k.cy - kps[i][1];
            // d(pi)/dy
            let a = nalgebra::Matrix2x3::new(
                k.fx * iz,
                0.0,
                -k.fx * y.x * iz * iz,
                0.0,
                k.fy * iz,
                -k.fy * y.y * iz * iz,
            );
            // y = exp(w) R x + t + dt  =>  dy/dw = -[Rx]_x, dy/dt = I
            let rx = r * pts[i];
            let skew = Matrix3::new(
                0.0, -rx.z, rx.y, //
                rx.z, 0.0, -rx.x, //
                -rx.y, rx.x, 0.0,
            );
            let mut j = nalgebra::Matrix2x6::<f64>::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(a * (-skew)));
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&a);
            h += j.transpose() * j;
            g += j.transpose() * nalgebra::Vector2::new(res_u, res_v);
        }
        let delta = match h.cholesky() {
            Some(ch) => ch.solve(&(-g)),
            None => match h.lu().solve(&(-g)) {
                Some(d) => d,
                None => break,
            },
        };
        if !delta.iter().all(|x| x.is_finite()) {
            break;
        }

        // halving line search: never accept a worse pose
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=10 {
            let w = Vector3::new(delta[0], delta[1], delta[2]) * scale;
            let dt = Vector3::new(delta[3], delta[4], delta[5]) * scale;
            let rot = UnitQuaternion::from_scaled_axis(w) * current.rotation();
            let trial = Pose::new(rot, t + dt);
            let trial_cost = total_cost(&trial, k, pts, kps);
            if trial_cost <= cost {
                current = trial;
                cost = trial_cost;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        if delta.norm() * scale < 1e-8 {
            break;
        }
    }
    current
}
