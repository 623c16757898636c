#pragma once

#include <charconv>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "vspcn/errors.hpp"
#include "vspcn/tape.hpp"
#include "vspcn/tensor.hpp"

namespace vspcn {

/// Shared semantic attribute matrix S: one D-dim word vector per attribute.
/// S is an input to the network, never a learnable.
struct AttributeMatrix {
  Tensor<double> vectors;  // N_a x D
  std::vector<std::string> names;

  std::size_t count() const { return vectors.rows(); }
  std::size_t dim() const { return vectors.cols(); }
};

/// Reads `name v_1 ... v_D` lines (whitespace separated). Blank lines are
/// skipped; anything else that does not parse is reported with its line
/// number.
inline AttributeMatrix load_attribute_vectors(const std::string& path, std::size_t expected_count,
                                              std::size_t expected_dim) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open attribute file '" + path + "'");
  AttributeMatrix out;
  std::vector<double> values;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::vector<std::string_view> tokens;
    std::string_view rest(line);
    while (true) {
      const auto b = rest.find_first_not_of(" \t\r");
      if (b == std::string_view::npos) break;
      rest.remove_prefix(b);
      const auto e = rest.find_first_of(" \t\r");
      tokens.push_back(rest.substr(0, e));
      if (e == std::string_view::npos) break;
      rest.remove_prefix(e);
    }
    if (tokens.empty()) continue;
    const auto where = path + ":" + std::to_string(line_no);
    if (tokens.size() != expected_dim + 1) {
      throw ParseError(where + ": expected a name and " + std::to_string(expected_dim) + " values, found " +
                       std::to_string(tokens.size()) + " fields");
    }
    out.names.emplace_back(tokens[0]);
    for (std::size_t i = 1; i < tokens.size(); ++i) {
      double v = 0;
      auto tok = tokens[i];
      if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc{} || ptr != tok.data() + tok.size() || !std::isfinite(v)) {
        throw ParseError(where + ": '" + std::string(tokens[i]) + "' is not a finite number");
      }
      values.push_back(v);
    }
  }
  if (out.names.empty()) throw ParseError(path + ": no attribute vectors found");
  if (out.names.size() != expected_count) {
    throw DimensionError(path + ": expected " + std::to_string(expected_count) + " attributes, found " +
                         std::to_string(out.names.size()));
  }
  out.vectors = Tensor<double>({out.names.size(), expected_dim}, std::move(values));
  return out;
}

/// Embedded class prototypes: row y is a_y * W_d.
template <std::floating_point T>
Var<T> embed_prototypes(const Var<T>& class_attributes, const Var<T>& w_d) {
  if (class_attributes.cols() != w_d.rows()) {
    throw DimensionError("embed_prototypes: class attributes " + shape_string(class_attributes.shape()) +
                         " do not fit embedding " + shape_string(w_d.shape()));
  }
  return ad::matmul(class_attributes, w_d);
}

template <std::floating_point T>
Tensor<T> embed_prototypes(const Tensor<T>& class_attributes, const Tensor<T>& w_d) {
  if (class_attributes.cols() != w_d.rows()) {
    throw DimensionError("embed_prototypes: class attributes " + shape_string(class_attributes.shape()) +
                         " do not fit embedding " + shape_string(w_d.shape()));
  }
  return kernel::matmul(class_attributes, w_d);
}

}  // namespace vspcn
