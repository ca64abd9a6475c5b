#pragma once

#include <chrono>
#include <csignal>
#include <memory>
#include <string>

#include <boost/process.hpp>

#include "distner/error.hpp"

namespace distner {

// An out-of-process plugin speaking a one-line-in, one-line-out protocol over stdin/stdout.
// The command runs under /bin/sh so it may carry arguments and pipes.
class LineProcess {
 public:
  explicit LineProcess(const std::string& command) : command_(command) {
    // A dead plugin must surface as a write error, not kill us.
    std::signal(SIGPIPE, SIG_IGN);
    try {
      child_ = std::make_unique<boost::process::child>("/bin/sh", "-c", command,
                                                       boost::process::std_in < to_child_,
                                                       boost::process::std_out > from_child_);
    } catch (const std::exception& e) {
      throw Error("plugin_failure", "cannot start plugin '" + command + "': " + e.what());
    }
  }

  LineProcess(const LineProcess&) = delete;
  LineProcess& operator=(const LineProcess&) = delete;

  ~LineProcess() {
    try {
      to_child_.flush();
    } catch (...) {
    }
    try {
      to_child_.close();
      to_child_.pipe().close();
      if (child_ && child_->running()) {
        if (!child_->wait_for(std::chrono::seconds(2))) child_->terminate();
      }
    } catch (...) {
    }
  }

  std::string request(const std::string& line) {
    std::string reply;
    try {
      if (!to_child_.good()) throw Error("plugin_failure", "plugin '" + command_ + "' is not accepting input");
      to_child_ << line << '\n';
      to_child_.flush();
      if (!to_child_.good()) throw Error("plugin_failure", "plugin '" + command_ + "' closed its input");
      if (!std::getline(from_child_, reply)) {
        throw Error("plugin_failure", "plugin '" + command_ + "' produced no reply");
      }
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw Error("plugin_failure", "plugin '" + command_ + "': " + e.what());
    }
    return reply;
  }

  const std::string& command() const { return command_; }

 private:
  std::string command_;
  boost::process::opstream to_child_;
  boost::process::ipstream from_child_;
  std::unique_ptr<boost::process::child> child_;
};

}  // namespace distner
