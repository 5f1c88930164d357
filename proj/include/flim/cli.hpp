#pragma once

namespace flim {

/// Entry point of the `flim` tool. Returns 0 on success, 2 on usage errors and
/// 1 on runtime errors.
int cli_main(int argc, const char* const* argv);

}  // namespace flim
