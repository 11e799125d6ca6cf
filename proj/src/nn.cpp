#include "langsg/nn.hpp"

#include <sstream>
#include <stdexcept>

namespace langsg {

void MlpSpec::validate() const {
  if (widths.size() < 2) throw ShapeError("mlp: need at least one layer");
  for (int w : widths) {
    if (w <= 0) throw ShapeError("mlp: widths must be positive");
  }
  const std::size_t layers = widths.size() - 1;
  if (relu.size() != layers || batch_norm.size() != layers) {
    throw ShapeError("mlp: per-layer flag count does not match layer count");
  }
}

MlpSpec MlpSpec::hidden_relu(std::vector<int> widths) {
  MlpSpec s;
  const std::size_t layers = widths.empty() ? 0 : widths.size() - 1;
  s.widths = std::move(widths);
  s.relu.assign(layers, true);
  if (layers) s.relu.back() = false;
  s.batch_norm.assign(layers, false);
  return s;
}

MlpSpec MlpSpec::all_relu(std::vector<int> widths) {
  MlpSpec s;
  const std::size_t layers = widths.empty() ? 0 : widths.size() - 1;
  s.widths = std::move(widths);
  s.relu.assign(layers, true);
  s.batch_norm.assign(layers, false);
  return s;
}

MlpSpec MlpSpec::hidden_bn_relu(std::vector<int> widths) {
  MlpSpec s = hidden_relu(std::move(widths));
  for (std::size_t l = 0; l + 1 < s.batch_norm.size(); ++l) s.batch_norm[l] = true;
  return s;
}

std::string MlpSpec::describe() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (i) {
      os << (batch_norm[i - 1] ? "b" : "") << (relu[i - 1] ? "r" : "") << ">";
    }
    os << widths[i];
  }
  return os.str();
}

double linear_lr(int epoch, int total_epochs, double base_lr) {
  if (total_epochs <= 0) throw std::invalid_argument("linear_lr: total_epochs must be positive");
  if (epoch < 0 || epoch > total_epochs) throw std::invalid_argument("linear_lr: epoch out of range");
  return base_lr * (1.0 - static_cast<double>(epoch) / total_epochs);
}

}  // namespace langsg
