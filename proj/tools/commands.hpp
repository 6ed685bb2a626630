/*
 * styleseg: MRI glioma segmentation with style-transfer augmentation
 *
 * Copyright 2026 styleseg contributors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <string>
#include <vector>

namespace styleseg::cli {

struct CommandOutcome {
  int exit_code = 0;  // 0 success, 2 usage, 3 data, 4 numerical
  std::vector<std::string> report_paths;
  std::string log_path;
  std::vector<std::string> errors;  // exit_code is 0 iff this is empty
};

// Parses argv and executes the selected subcommand. Never throws; failures
// are reported through the outcome (and on stderr).
CommandOutcome run(int argc, const char* const* argv);

}  // namespace styleseg::cli
