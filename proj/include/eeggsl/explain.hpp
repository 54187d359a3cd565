#pragma once

#include <string>
#include <vector>

#include "eeggsl/model.hpp"
#include "eeggsl/signal.hpp"

namespace eeggsl {

/// Slice `b` of a (B, C, C) tensor, or the whole of a (C, C) tensor.
Matrix to_matrix(const Tensor& t, std::size_t b = 0);

/// Learned head adjacencies of one window and the gradient of the target
/// logit with respect to each.
struct HeadGradients {
  std::vector<Matrix> adjacency;
  std::vector<Matrix> gradients;
  int target_class = 0;
  int predicted_class = 0;
};

/// One backward pass per batch from the summed target logits, with every
/// A_h a leaf. In eval mode samples do not interact, so each sample's slice
/// is its own gradient. A target of -1 selects the predicted class. Rejects
/// models without MH-GSL.
std::vector<HeadGradients> head_gradients(Model& model, const std::vector<const Window*>& windows,
                                          const std::vector<int>& targets, std::size_t batch_size = 32);
HeadGradients head_gradients(Model& model, const Window& window, int target_class);

struct Explanation {
  Matrix adjacency;  // in [0, 1]
  int target_class = 0;
  std::string subject_id;
  std::size_t window_index = 0;
  std::vector<double> head_grad_norms;
  /// Raw matrix was constant (for example all gradient norms zero).
  bool degenerate = false;
};

/// Clamps entries to mean +- 2 std (population, over all entries), then
/// min-max normalizes. A constant matrix maps to zeros and sets `degenerate`.
Matrix clamp_and_normalize(const Matrix& raw, bool* degenerate = nullptr);

double frobenius_norm(const Matrix& m);

/// (1/H) sum_h ||grad_h||_F A_h, then clamp_and_normalize.
Explanation explain(const std::vector<Matrix>& heads, const std::vector<Matrix>& grads);
Explanation explain(const HeadGradients& g);

/// (1/H) sum_h A_h, then clamp_and_normalize.
Matrix mean_attention_baseline(const std::vector<Matrix>& heads);

struct GroupExplanation {
  Matrix adjacency;
  Label group = Label::HC;
  std::size_t n_samples = 0;
};

/// Entrywise mean over the members' adjacencies. Rejects an empty set and
/// mismatched sizes.
GroupExplanation group_mean(const std::vector<Explanation>& members, Label group);

/// Header row of channel names, then one row per channel.
void write_matrix_csv(const std::string& path, const Matrix& m, const std::vector<std::string>& channel_names);
Matrix read_matrix_csv(const std::string& path, std::vector<std::string>* channel_names = nullptr);
/// Binary 8-bit grayscale, 0 -> black and 1 -> white, `cell` pixels per entry.
void write_matrix_pgm(const std::string& path, const Matrix& m, std::size_t cell = 16);

/// (M + M^T) / 2. The graph convolution only sees this part of A.
Matrix symmetrize(const Matrix& m);

/// Median of the off-diagonal entries.
double offdiagonal_median(const Matrix& m);

}  // namespace eeggsl
