#include "support/temp_dir.hpp"

#include <fstream>
#include <sstream>

#include <sys/wait.h>

namespace testutil {

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

RunResult run_command(const std::string& command, const TempDir& dir) {
  const std::string out_path = dir.file("cmd.out");
  const std::string err_path = dir.file("cmd.err");
  const std::string full = command + " > " + out_path + " 2> " + err_path;
  const int status = std::system(full.c_str());
  RunResult result;
  if (status != -1 && WIFEXITED(status)) result.exit_code = WEXITSTATUS(status);
  result.out = slurp(out_path);
  result.err = slurp(err_path);
  return result;
}

}  // namespace testutil
