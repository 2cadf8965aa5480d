#pragma once

// Operator weight files: <stem>.bin is a flat little-endian f64 stream in
// declaration order (stencil banks channel-major then row-major taps, channel
// matrices column-major); <stem>.json describes op_kind, m, c_in, c_out.

#include <concepts>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "leanconv/conv_ops.hpp"
#include "leanconv/tensor.hpp"

namespace leanconv {

template <std::floating_point T>
void write_f64_stream(std::ostream& os, std::span<const T> values) {
  for (T v : values) detail::put_f64(os, static_cast<double>(v));
}

template <std::floating_point T>
std::vector<T> read_f64_stream(std::istream& is, std::size_t count) {
  std::vector<T> out(count);
  for (auto& v : out) v = static_cast<T>(detail::get_f64(is));
  return out;
}

template <std::floating_point T>
nlohmann::json operator_descriptor(const ConvOperator<T>& op) {
  return {{"op_kind", std::string(to_string(op.kind()))},
          {"m", op.stencil_size()},
          {"c_in", op.in_channels()},
          {"c_out", op.out_channels()},
          {"weights", op.weight_count()},
          {"encoding", "f64le"}};
}

template <std::floating_point T>
void save_operator(const std::string& stem, const ConvOperator<T>& op) {
  {
    std::ofstream os(stem + ".bin", std::ios::binary);
    if (!os) throw Error("cannot open " + stem + ".bin for writing");
    const auto w = op.flat_weights();
    write_f64_stream<T>(os, w);
  }
  std::ofstream js(stem + ".json");
  if (!js) throw Error("cannot open " + stem + ".json for writing");
  js << operator_descriptor(op).dump(2) << "\n";
}

template <std::floating_point T = double>
ConvOperator<T> load_operator(const std::string& stem) {
  std::ifstream js(stem + ".json");
  if (!js) throw Error("cannot open " + stem + ".json");
  const auto desc = nlohmann::json::parse(js);
  const auto kind = parse_op_kind(desc.at("op_kind").get<std::string>());
  const auto m = desc.at("m").get<std::size_t>();
  const auto c_in = desc.at("c_in").get<std::size_t>();
  const auto c_out = desc.at("c_out").get<std::size_t>();

  std::ifstream is(stem + ".bin", std::ios::binary);
  if (!is) throw Error("cannot open " + stem + ".bin");

  auto op = [&]() -> ConvOperator<T> {
    switch (kind) {
      case OpKind::fully_coupled:
        return ConvOperator<T>::fully_coupled(StencilGrid<T>(m, c_out, c_in));
      case OpKind::depthwise:
        return ConvOperator<T>::depthwise(StencilBank<T>(m, c_in));
      case OpKind::one_by_one:
        return ConvOperator<T>::one_by_one(ChannelMatrix<T>(c_out, c_in));
      case OpKind::linear_mix:
        return ConvOperator<T>::linear_mix(StencilBank<T>(m, c_in),
                                           ChannelMatrix<T>(c_in, c_in));
      case OpKind::circulant:
        return ConvOperator<T>::circulant(StencilBank<T>(m, c_in));
      default:
        throw Error("load_operator: '" + std::string(to_string(kind)) +
                    "' is a step kind, not a single operator");
    }
  }();
  const auto w = read_f64_stream<T>(is, op.weight_count());
  op.set_flat_weights(w);
  return op;
}

}  // namespace leanconv
