// ilb/serialize.h

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

#ifndef ILB_SERIALIZE_H_
#define ILB_SERIALIZE_H_

#include <iosfwd>
#include <string>

#include "ilb/tensor.h"

namespace ilb {

// Tensor blob: one text header line "shape: d0 d1 ...\n" followed by numel
// raw float64 values, little-endian, row-major. The explicit byte order makes
// files bit-portable across machines.
void WriteTensor(std::ostream& os, const Tensor& t);
Tensor ReadTensor(std::istream& is);

// Reads one header line and requires it to start with `key` followed by a
// space; returns the remainder. Throws IoError otherwise.
std::string ReadHeaderLine(std::istream& is, const std::string& key);

}  // namespace ilb

#endif  // ILB_SERIALIZE_H_
