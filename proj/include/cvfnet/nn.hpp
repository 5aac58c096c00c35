// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "cvfnet/ops.hpp"
#include "cvfnet/rng.hpp"
#include "cvfnet/tensor.hpp"

namespace cvf {

template <typename T>
using ParamList = std::vector<std::pair<std::string, Tensor<T>>>;

namespace nn {

// He-uniform fan-in initialisation; draws are in double and narrowed to T so
// that float and double models built from the same seed match.
template <typename T>
Tensor<T> init_weight(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  auto t = Tensor<T>::zeros(std::move(shape), true);
  for (auto& v : t.value()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
struct Linear {
  Tensor<T> weight;  // [Ci, Co]
  Tensor<T> bias;    // [Co]

  Linear() = default;
  Linear(std::size_t ci, std::size_t co, Rng& rng)
      : weight(init_weight<T>({ci, co}, ci, rng)),
        bias(Tensor<T>::zeros({co}, true)) {}

  std::size_t in_channels() const { return weight.dim(0); }
  std::size_t out_channels() const { return weight.dim(1); }

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const {
    return ops::linear(tape, x, weight, bias);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }
};

template <typename T>
struct Conv2d {
  Tensor<T> weight;  // [K, C, kh, kw]
  Tensor<T> bias;    // [K]
  int stride = 1;
  int padding = 1;

  Conv2d() = default;
  Conv2d(std::size_t c_in, std::size_t c_out, int ksize, int stride_, Rng& rng)
      : weight(init_weight<T>({c_out, c_in, static_cast<std::size_t>(ksize),
                               static_cast<std::size_t>(ksize)},
                              c_in * ksize * ksize, rng)),
        bias(Tensor<T>::zeros({c_out}, true)),
        stride(stride_),
        padding(ksize / 2) {}

  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const {
    return ops::conv2d(tape, x, weight, bias, stride, padding);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }
};

// Stack of fully-connected layers, relu after each.
template <typename T>
struct Mlp {
  std::vector<Linear<T>> layers;

  Mlp() = default;
  Mlp(std::size_t c_in, const std::vector<int>& widths, Rng& rng) {
    std::size_t c = c_in;
    for (int w : widths) {
      layers.emplace_back(c, static_cast<std::size_t>(w), rng);
      c = static_cast<std::size_t>(w);
    }
  }

  std::size_t out_channels() const { return layers.back().out_channels(); }

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const {
    Tensor<T> y = x;
    for (const auto& l : layers) y = ops::relu(tape, l.forward(tape, y));
    return y;
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    for (std::size_t i = 0; i < layers.size(); ++i)
      layers[i].collect(prefix + ".fc" + std::to_string(i), out);
  }
};

}  // namespace nn
}  // namespace cvf
