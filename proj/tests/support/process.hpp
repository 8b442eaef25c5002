#pragma once

#include <array>
#include <cstdio>
#include <string>

#include <sys/wait.h>

namespace ear::test {

struct ProcessResult {
  int exit_code = -1;
  std::string out;
};

/// Runs a shell command and captures stdout; stderr is discarded unless redirected by the caller.
inline ProcessResult run_command(const std::string& command) {
  ProcessResult r;
  FILE* pipe = ::popen((command + " 2>/dev/null").c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = ::pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

inline std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

}  // namespace ear::test
