#include <exception>
#include <iostream>

#include "tinyde/errors.hpp"
#include "tinyde/experiments.hpp"

int main(int argc, char** argv) {
  const tinyde::ParsedCommand cmd = tinyde::parse_command_line(argc, argv);
  if (!cmd.config) {
    (cmd.exit_code == tinyde::kExitOk ? std::cout : std::cerr) << cmd.message;
    return cmd.exit_code;
  }
  try {
    std::cout << tinyde::run_experiment(*cmd.config);
    std::cout << "results written to " << cmd.config->out_dir.string() << '\n';
    return tinyde::kExitOk;
  } catch (const tinyde::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return tinyde::kExitConfig;
  } catch (const tinyde::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return tinyde::kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return tinyde::kExitRuntime;
  }
}
