#include "eeggsl/common.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>

namespace eeggsl {
namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

WarningSink& sink_slot() {
  static WarningSink sink = [](const std::string& msg) {
    std::cerr << "warning: " << msg << '\n';
  };
  return sink;
}

}  // namespace

void warn(const std::string& msg) {
  std::lock_guard<std::mutex> lock(sink_mutex());
  if (sink_slot()) sink_slot()(msg);
}

WarningSink set_warning_sink(WarningSink sink) {
  std::lock_guard<std::mutex> lock(sink_mutex());
  WarningSink previous = std::move(sink_slot());
  sink_slot() = std::move(sink);
  return previous;
}

WarningCapture::WarningCapture() {
  previous_ = set_warning_sink([this](const std::string& msg) { messages_.push_back(msg); });
}

WarningCapture::~WarningCapture() { set_warning_sink(std::move(previous_)); }

bool WarningCapture::contains(const std::string& needle) const {
  for (const auto& m : messages_) {
    if (m.find(needle) != std::string::npos) return true;
  }
  return false;
}

void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) fail(ErrorCode::Io, "write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) fail(ErrorCode::Io, "rename " + tmp.string() + " -> " + path + ": " + ec.message());
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace eeggsl
