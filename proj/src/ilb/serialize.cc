// ilb/serialize.cc

// Copyright 2026  The ilb-asr authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "ilb/serialize.h"

#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

namespace ilb {

void WriteTensor(std::ostream& os, const Tensor& t) {
  os << "shape:";
  for (Dim d : t.shape()) os << ' ' << d;
  os << '\n';
  std::span<const double> data = t.data();
  std::vector<char> buf(data.size() * 8);
  for (size_t i = 0; i < data.size(); ++i) {
    uint64_t u;
    std::memcpy(&u, &data[i], 8);
    for (int b = 0; b < 8; ++b) {
      buf[i * 8 + b] = static_cast<char>((u >> (8 * b)) & 0xff);
    }
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw IoError("tensor write failed");
}

Tensor ReadTensor(std::istream& is) {
  std::string rest = ReadHeaderLine(is, "shape:");
  std::istringstream ls(rest);
  Shape shape;
  Dim d;
  while (ls >> d) shape.push_back(d);
  if (shape.empty()) throw IoError("tensor header carries no dimensions");
  const Dim numel = ShapeNumel(shape);
  std::vector<char> buf(static_cast<size_t>(numel) * 8);
  is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (is.gcount() != static_cast<std::streamsize>(buf.size())) {
    throw IoError(StrCat("tensor payload truncated: wanted ", buf.size(),
                         " bytes, got ", is.gcount()));
  }
  std::vector<double> data(static_cast<size_t>(numel));
  for (size_t i = 0; i < data.size(); ++i) {
    uint64_t u = 0;
    for (int b = 0; b < 8; ++b) {
      u |= static_cast<uint64_t>(static_cast<unsigned char>(buf[i * 8 + b]))
           << (8 * b);
    }
    std::memcpy(&data[i], &u, 8);
  }
  return Tensor::FromData(std::move(shape), std::move(data));
}

std::string ReadHeaderLine(std::istream& is, const std::string& key) {
  std::string line;
  if (!std::getline(is, line)) {
    throw IoError(StrCat("missing header line '", key, "'"));
  }
  if (line.rfind(key, 0) != 0) {
    throw IoError(StrCat("bad header line, wanted '", key, "', got '", line,
                         "'"));
  }
  std::string rest = line.substr(key.size());
  if (!rest.empty() && rest.front() == ' ') rest.erase(rest.begin());
  return rest;
}

}  // namespace ilb
