#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "pairforge/tensor.hpp"

namespace pf {

/// Raised on malformed or unreadable tensor/checkpoint streams.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// PFTN layout, little-endian: "PFTN", u32 rank, u32 extents[rank], f64 payload.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

std::string encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::string& bytes);

void write_tensors_file(const std::string& path, const std::vector<Tensor>& tensors);
std::vector<Tensor> read_tensors_file(const std::string& path);

}  // namespace pf
