#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace tips::cli {

// Outcome of the scripted Alice→Bob walkthrough. With the fixed seeds the
// transcript is bit-identical across runs in fresh directories; the data dir
// is left populated and usable by further commands.
struct DemoResult {
    std::string transcript;
    std::string sentinel;          // marker string sealed inside the bundle
    std::string envelope_id_hex;
    std::uint64_t alice_serial = 0;
    std::uint64_t bob_serial = 0;
    std::string channel;
};

// Runs the demo against `data_dir`, which must be empty or absent.
// Throws TipsError{DataDirNotEmpty} otherwise.
DemoResult run_demo(const std::filesystem::path& data_dir);

// Full command-line entry point. `args` are the tokens after the program
// name, in natural order. Output and diagnostics go to the given streams;
// errors are printed as `ERROR <CODE>: <message>`. Returns the process exit
// code and never throws.
int dispatch(std::vector<std::string> args, std::ostream& out, std::ostream& err);

}  // namespace tips::cli
