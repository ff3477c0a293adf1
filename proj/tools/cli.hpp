#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace docmem::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kUsage = 2;

// Runs one command line (args excludes the program name). Reports go to
// `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Git-style blob hash: sha1("blob <size>\0" + bytes), lowercase hex.
std::string content_hash(const std::filesystem::path& path);

}  // namespace docmem::cli
