// ilb/cli.h

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

#ifndef ILB_CLI_H_
#define ILB_CLI_H_

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace ilb {

// Everything needed to reproduce a run: the command, the resolved option
// values (defaults included), and the files the command promises to write.
// Written into the run directory before any computation starts; contains no
// timestamps so a rerun produces identical bytes.
struct RunManifest {
  std::string command;
  std::string version;
  uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> options;
  std::vector<std::string> artifacts;  // paths relative to the run directory
};

void WriteManifest(const std::string& path, const RunManifest& m);
RunManifest ReadManifest(const std::string& path);

// Entry point shared by the binary and the tests. args excludes the program
// name. Commands: gen, train, ablate, decode, train-lm, dump-attention,
// rerun. Returns 0 only when every artifact declared in the manifest was
// written and reads back cleanly.
int RunCli(std::vector<std::string> args, std::ostream& out,
           std::ostream& err);

}  // namespace ilb

#endif  // ILB_CLI_H_
