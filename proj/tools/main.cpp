#include <charconv>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "cli_lib.hpp"
#include "ndthash/parallel.hpp"

int main(int argc, char** argv) {
  if (const char* env = std::getenv("NDT_HASH_THREADS")) {
    const std::string value(env);
    std::size_t threads = 0;
    const auto [ptr, ec] =
        std::from_chars(value.data(), value.data() + value.size(), threads);
    if (ec != std::errc{} || ptr != value.data() + value.size() || threads < 1) {
      std::cerr << "NDT_HASH_THREADS must be a positive integer, got '" << value
                << "'\n";
      return ndthash::cli::kUsageError;
    }
    ndthash::set_max_threads(threads);
  }
  const std::vector<std::string> args(argv + 1, argv + argc);
  return ndthash::cli::run_cli(args, std::cout, std::cerr);
}
