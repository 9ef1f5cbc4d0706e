//! Normalized direct linear transform.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4, SymmetricEigen};

use super::{validate_correspondences, Correspondence, ProjectionError, MINIMAL_SAMPLE};

/// Design matrices whose condition number (largest singular value over the
/// second smallest) exceeds this are treated as degenerate.
pub const DEFAULT_MAX_CONDITION: f64 = 1e8;

/// Relative spread below which 3-D points count as coplanar.
const COPLANAR_RATIO: f64 = 1e-10;

/// Similarity transforms that center the points and scale them to unit
/// average coordinate magnitude.
struct Normalization {
    image: Matrix3<f64>,
    image_inv: Matrix3<f64>,
    world: Matrix4<f64>,
}

fn normalization(corrs: &[Correspondence]) -> Normalization {
    let n = corrs.len() as f64;
    let mut c2 = [0.0; 2];
    let mut c3 = [0.0; 3];
    for c in corrs {
        for k in 0..2 {
            c2[k] += c.point2[k] / n;
        }
        for k in 0..3 {
            c3[k] += c.point3[k] / n;
        }
    }
    let d2 = corrs
        .iter()
        .map(|c| ((c.point2[0] - c2[0]).powi(2) + (c.point2[1] - c2[1]).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    let d3 = corrs
        .iter()
        .map(|c| (0..3).map(|k| (c.point3[k] - c3[k]).powi(2)).sum::<f64>().sqrt())
        .sum::<f64>()
        / n;
    let s2 = if d2 > 0.0 { 2f64.sqrt() / d2 } else { 1.0 };
    let s3 = if d3 > 0.0 { 3f64.sqrt() / d3 } else { 1.0 };
    let image = Matrix3::new(s2, 0.0, -s2 * c2[0], 0.0, s2, -s2 * c2[1], 0.0, 0.0, 1.0);
    let image_inv = Matrix3::new(1.0 / s2, 0.0, c2[0], 0.0, 1.0 / s2, c2[1], 0.0, 0.0, 1.0);
    let world = Matrix4::new(
        s3,
        0.0,
        0.0,
        -s3 * c3[0],
        0.0,
        s3,
        0.0,
        -s3 * c3[1],
        0.0,
        0.0,
        s3,
        -s3 * c3[2],
        0.0,
        0.0,
        0.0,
        1.0,
    );
    Normalization {
        image,
        image_inv,
        world,
    }
}

/// True when the 3-D points span less than a volume.
pub(crate) fn is_coplanar(corrs: &[Correspondence]) -> bool {
    let n = corrs.len() as f64;
    let mut mean = [0.0; 3];
    for c in corrs {
        for k in 0..3 {
            mean[k] += c.point3[k] / n;
        }
    }
    let mut scatter = Matrix3::<f64>::zeros();
    for c in corrs {
        for i in 0..3 {
            for j in 0..3 {
                scatter[(i, j)] += (c.point3[i] - mean[i]) * (c.point3[j] - mean[j]);
            }
        }
    }
    let eig = SymmetricEigen::new(scatter).eigenvalues;
    let max = eig.iter().cloned().fold(0.0, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    max <= 0.0 || min / max < COPLANAR_RATIO
}

/// Least-squares projection from at least six correspondences, with rows
/// weighted by each correspondence's `weight`.
///
/// Returns the raw (un-canonicalized) matrix.
pub fn fit_dlt(corrs: &[Correspondence], max_condition: f64) -> Result<Matrix3x4<f64>, ProjectionError> {
    if corrs.len() < MINIMAL_SAMPLE {
        return Err(ProjectionError::MinimalSampleUnavailable(corrs.len()));
    }
    validate_correspondences(corrs)?;
    let norm = normalization(corrs);
    let rows = 2 * corrs.len();
    let mut a = DMatrix::<f64>::zeros(rows.max(12), 12);
    for (i, c) in corrs.iter().enumerate() {
        let x = norm.world * nalgebra::Vector4::new(c.point3[0], c.point3[1], c.point3[2], 1.0);
        let p = norm.image * nalgebra::Vector3::new(c.point2[0], c.point2[1], 1.0);
        let (u, v) = (p.x, p.y);
        let w = c.weight;
        for k in 0..4 {
            a[(2 * i, k)] = w * x[k];
            a[(2 * i, 8 + k)] = -w * u * x[k];
            a[(2 * i + 1, 4 + k)] = w * x[k];
            a[(2 * i + 1, 8 + k)] = -w * v * x[k];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let largest = svd.singular_values[order[0]];
    let second_smallest = svd.singular_values[order[order.len() - 2]];
    let condition = if second_smallest > 0.0 {
        largest / second_smallest
    } else {
        f64::INFINITY
    };
    if !(condition <= max_condition) {
        return Err(ProjectionError::DegenerateConfiguration(condition));
    }
    let null = v_t.row(order[order.len() - 1]);
    let normalized = Matrix3x4::from_fn(|r, c| null[4 * r + c]);
    Ok(norm.image_inv * normalized * norm.world)
}
