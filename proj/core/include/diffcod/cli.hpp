#pragma once

#include <iosfwd>

namespace diffcod {

/// Command-line entry point: `train`, `sample`, `eval`, `synth` and
/// `schedule-dump`. Returns the process exit code; usage errors return 2.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace diffcod
