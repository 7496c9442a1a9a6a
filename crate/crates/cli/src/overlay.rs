use adnet_core::Tensor;

/// Pixels of a binary `h×w` mask that lie inside it and touch the outside
/// or the border through a 4-neighbour.
pub fn contour(mask: &[f64], h: usize, w: usize) -> Vec<bool> {
    let inside = |i: isize, j: isize| {
        i >= 0 && j >= 0 && (i as usize) < h && (j as usize) < w && mask[i as usize * w + j as usize] >= 0.5
    };
    let mut out = vec![false; h * w];
    for i in 0..h as isize {
        for j in 0..w as isize {
            if inside(i, j) && [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(di, dj)| !inside(i + di, j + dj)) {
                out[i as usize * w + j as usize] = true;
            }
        }
    }
    out
}

const RED: [f64; 3] = [1.0, 0.0, 0.0];
const BLUE: [f64; 3] = [0.0, 0.0, 1.0];

/// Draws the ground-truth contour in red and the predicted contour in blue
/// over `image` (`H×W×3`). Where the two coincide the prediction wins.
pub fn overlay(image: &Tensor, truth: Option<&Tensor>, prediction: &Tensor) -> Tensor {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let mut out = image.clone();
    let layers = truth.map(|t| (t, RED)).into_iter().chain([(prediction, BLUE)]);
    for (mask, colour) in layers {
        for (k, edge) in contour(mask.data(), h, w).into_iter().enumerate() {
            if edge {
                out.data_mut()[3 * k..3 * k + 3].copy_from_slice(&colour);
            }
        }
    }
    out
}
