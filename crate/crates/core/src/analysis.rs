//! Quantitative image metrics: peak location, -3 dB widths per axis, and
//! peak sidelobe level, plus before/after-calibration comparisons.
//!
//! The mainlobe is the contiguous region above -3 dB around the peak,
//! dilated by one voxel; PSL is the strongest magnitude outside it relative
//! to the peak. Samples exactly at -3 dB count as mainlobe. Cuts through
//! the peak are oversampled 4x (cubic) before the width crossings are read
//! off.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::imaging::Image3D;
use crate::Vec3;

/// Reported when nothing outside the mainlobe carries energy.
pub const PSL_FLOOR_DB: f64 = -120.0;

const MINUS_3DB: f64 = 0.707_945_784_384_137_9; // 10^(-3/20)

#[derive(Debug, Clone)]
pub struct PsfReport {
    /// Interpolated peak position (m, target frame).
    pub peak_position: Vec3,
    pub peak_magnitude: f64,
    /// -3 dB full widths per axis (m). Singleton axes report one voxel
    /// spacing; cuts that never drop below -3 dB clamp at the grid edge.
    pub widths: [f64; 3],
    /// Peak sidelobe level (dB, < 0).
    pub psl_db: f64,
    /// Voxel count of the mainlobe mask before dilation.
    pub mainlobe_voxels: usize,
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub before: PsfReport,
    pub after: PsfReport,
    pub delta_psl_db: f64,
    pub delta_widths: [f64; 3],
    /// |peak_after - peak_before| (m).
    pub peak_displacement: f64,
}

/// Optional rectangular search region (min, max corners, in meters).
pub type SearchRegion = Option<(Vec3, Vec3)>;

/// Catmull-Rom interpolation of a sample row at fractional index `x`.
fn cubic_at(row: &[f64], x: f64) -> f64 {
    let n = row.len();
    if n == 1 {
        return row[0];
    }
    let xc = x.clamp(0.0, (n - 1) as f64);
    let i = (xc as usize).min(n - 2);
    let t = xc - i as f64;
    let p0 = row[i.saturating_sub(1)];
    let p1 = row[i];
    let p2 = row[i + 1];
    let p3 = row[(i + 2).min(n - 1)];
    let a = -0.5 * p0 + 1.5 * p1 - 1.5 * p2 + 0.5 * p3;
    let b = p0 - 2.5 * p1 + 2.0 * p2 - 0.5 * p3;
    let c = -0.5 * p0 + 0.5 * p2;
    ((a * t + b) * t + c) * t + p1
}

/// -3 dB full width of a cut, measured on a 4x oversampled interpolation
/// around the peak at fractional index `peak_x`.
fn width_of_cut(row: &[f64], peak_x: f64, spacing: f64) -> f64 {
    if row.len() == 1 {
        return spacing;
    }
    let oversample = 4usize;
    let step = 1.0 / oversample as f64;
    let peak_val = cubic_at(row, peak_x);
    let threshold = peak_val * MINUS_3DB;
    let max_x = (row.len() - 1) as f64;

    let mut right = max_x;
    let mut x = peak_x;
    while x + step <= max_x + 1e-12 {
        let next = (x + step).min(max_x);
        let v0 = cubic_at(row, x);
        let v1 = cubic_at(row, next);
        if v1 < threshold {
            // Linear refinement inside the oversampled step.
            let f = if (v0 - v1).abs() > 0.0 { (v0 - threshold) / (v0 - v1) } else { 0.0 };
            right = x + f * (next - x);
            break;
        }
        x = next;
        if x >= max_x {
            break;
        }
    }
    let mut left = 0.0;
    let mut x = peak_x;
    while x - step >= -1e-12 {
        let next = (x - step).max(0.0);
        let v0 = cubic_at(row, x);
        let v1 = cubic_at(row, next);
        if v1 < threshold {
            let f = if (v0 - v1).abs() > 0.0 { (v0 - threshold) / (v0 - v1) } else { 0.0 };
            left = x - f * (x - next);
            break;
        }
        x = next;
        if x <= 0.0 {
            break;
        }
    }
    (right - left) * spacing
}

/// Quadratic sub-sample refinement of a peak from its two neighbors.
fn parabolic_offset(m_minus: f64, m_center: f64, m_plus: f64) -> f64 {
    let denom = m_minus - 2.0 * m_center + m_plus;
    if denom.abs() < f64::EPSILON * m_center.max(1.0) {
        0.0
    } else {
        (0.5 * (m_minus - m_plus) / denom).clamp(-0.5, 0.5)
    }
}

/// Measure the point-spread function around the strongest voxel.
pub fn psf_metrics(image: &Image3D, region: SearchRegion) -> Result<PsfReport> {
    let grid = &image.grid;
    let dims = grid.dims;
    let mag: Vec<f64> = image.voxels.iter().map(|v| v.norm()).collect();

    let in_region = |i: usize, j: usize, k: usize| -> bool {
        match &region {
            None => true,
            Some((lo, hi)) => {
                let p = grid.center_of(i, j, k);
                (0..3).all(|a| p[a] >= lo[a] - 1e-12 && p[a] <= hi[a] + 1e-12)
            }
        }
    };

    let mut peak_idx = None;
    let mut peak_mag = 0.0;
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let m = mag[grid.index(i, j, k)];
                if in_region(i, j, k) && m > peak_mag {
                    peak_mag = m;
                    peak_idx = Some((i, j, k));
                }
            }
        }
    }
    let Some((pi, pj, pk)) = peak_idx else {
        return Err(Error::Analysis("image is flat: no unique maximum".into()));
    };
    if peak_mag <= 0.0 {
        return Err(Error::Analysis("image is flat: no unique maximum".into()));
    }

    // Axis cuts through the peak voxel.
    let cut_x: Vec<f64> = (0..dims[0]).map(|i| mag[grid.index(i, pj, pk)]).collect();
    let cut_y: Vec<f64> = (0..dims[1]).map(|j| mag[grid.index(pi, j, pk)]).collect();
    let cut_z: Vec<f64> = (0..dims[2]).map(|k| mag[grid.index(pi, pj, k)]).collect();

    let off = |cut: &[f64], c: usize| -> f64 {
        if c == 0 || c + 1 >= cut.len() {
            0.0
        } else {
            parabolic_offset(cut[c - 1], cut[c], cut[c + 1])
        }
    };
    let off_x = off(&cut_x, pi);
    let off_y = off(&cut_y, pj);
    let off_z = off(&cut_z, pk);

    let peak_position = Vec3::new(
        grid.origin.x + (pi as f64 + off_x) * grid.spacing.x,
        grid.origin.y + (pj as f64 + off_y) * grid.spacing.y,
        grid.origin.z + (pk as f64 + off_z) * grid.spacing.z,
    );

    let widths = [
        width_of_cut(&cut_x, pi as f64 + off_x, grid.spacing.x),
        width_of_cut(&cut_y, pj as f64 + off_y, grid.spacing.y),
        width_of_cut(&cut_z, pk as f64 + off_z, grid.spacing.z),
    ];

    // Mainlobe mask: flood fill from the peak over voxels above -3 dB (ties
    // inclusive) and down the strictly descending skirt to the first null,
    // then dilate by one voxel. Without the skirt the region between -3 dB
    // and the null would masquerade as a sidelobe.
    let threshold = peak_mag * MINUS_3DB;
    let mut in_lobe = vec![false; mag.len()];
    let mut queue = VecDeque::new();
    let start = grid.index(pi, pj, pk);
    in_lobe[start] = true;
    queue.push_back((pi, pj, pk));
    while let Some((i, j, k)) = queue.pop_front() {
        let here = mag[grid.index(i, j, k)];
        let mut push = |ni: usize, nj: usize, nk: usize, q: &mut VecDeque<(usize, usize, usize)>| {
            let idx = grid.index(ni, nj, nk);
            if !in_lobe[idx] && (mag[idx] >= threshold || mag[idx] < here) {
                in_lobe[idx] = true;
                q.push_back((ni, nj, nk));
            }
        };
        if i > 0 {
            push(i - 1, j, k, &mut queue);
        }
        if i + 1 < dims[0] {
            push(i + 1, j, k, &mut queue);
        }
        if j > 0 {
            push(i, j - 1, k, &mut queue);
        }
        if j + 1 < dims[1] {
            push(i, j + 1, k, &mut queue);
        }
        if k > 0 {
            push(i, j, k - 1, &mut queue);
        }
        if k + 1 < dims[2] {
            push(i, j, k + 1, &mut queue);
        }
    }
    let mainlobe_voxels = in_lobe.iter().filter(|&&x| x).count();

    // Dilate by one voxel (3x3x3 box) so shoulder samples straddling the
    // threshold stay with the mainlobe.
    let mut dilated = in_lobe.clone();
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                if !in_lobe[grid.index(i, j, k)] {
                    continue;
                }
                for dk in k.saturating_sub(1)..(k + 2).min(dims[2]) {
                    for dj in j.saturating_sub(1)..(j + 2).min(dims[1]) {
                        for di in i.saturating_sub(1)..(i + 2).min(dims[0]) {
                            dilated[grid.index(di, dj, dk)] = true;
                        }
                    }
                }
            }
        }
    }

    let mut psl = 0.0f64;
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                if dilated[grid.index(i, j, k)] {
                    continue;
                }
                psl = psl.max(mag[grid.index(i, j, k)]);
            }
        }
    }
    let psl_db = if psl > 0.0 {
        (20.0 * (psl / peak_mag).log10()).max(PSL_FLOOR_DB)
    } else {
        PSL_FLOOR_DB
    };

    Ok(PsfReport {
        peak_position,
        peak_magnitude: peak_mag,
        widths,
        psl_db,
        mainlobe_voxels,
    })
}

/// Compare two images of the same grid, typically uncalibrated vs
/// calibrated renderings of the same point target.
pub fn compare_before_after(before: &Image3D, after: &Image3D) -> Result<ComparisonReport> {
    if before.grid != after.grid {
        return Err(Error::Analysis("images use different voxel grids".into()));
    }
    let rb = psf_metrics(before, None)?;
    let ra = psf_metrics(after, None)?;
    Ok(ComparisonReport {
        delta_psl_db: ra.psl_db - rb.psl_db,
        delta_widths: [
            ra.widths[0] - rb.widths[0],
            ra.widths[1] - rb.widths[1],
            ra.widths[2] - rb.widths[2],
        ],
        peak_displacement: (ra.peak_position - rb.peak_position).norm(),
        before: rb,
        after: ra,
    })
}
