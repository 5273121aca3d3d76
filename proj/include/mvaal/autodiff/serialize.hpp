#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mvaal/autodiff/tensor.hpp"

namespace mvaal::ad {

// Binary tensor blob, little-endian:
//   "MVT1" | rank:u32 | dims:u32 * rank | payload:f64 * numel
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::vector<std::uint8_t>& bytes);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace mvaal::ad
