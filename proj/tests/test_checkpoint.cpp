#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "hoflow/core/checkpoint.hpp"
#include "test_util.hpp"

using namespace hoflow;

namespace {
std::string tmp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}
}  // namespace

TEST_CASE("checkpoint round-trips bit-exactly") {
  Rng rng(9);
  ParamSet ps;
  ps.add("layer1.weight", {4, 3}, testutil::random_tensor({4, 3}, rng).vec());
  ps.add("layer1.bias", {3}, testutil::random_tensor({3}, rng).vec());
  ps.add("scalar", {}, {0.12345678f});
  const std::string path = tmp_path("hoflow_ckpt_test.bin");
  save_checkpoint(path, ps);

  ParamSet loaded = read_checkpoint(path);
  REQUIRE(loaded.size() == ps.size());
  for (size_t i = 0; i < ps.size(); ++i) {
    const auto& [name, t] = ps.items()[i];
    const auto& [lname, lt] = loaded.items()[i];
    REQUIRE(lname == name);
    REQUIRE(lt.shape() == t.shape());
    REQUIRE(std::memcmp(lt.data(), t.data(), static_cast<size_t>(t.size()) * 4) == 0);
  }

  // second save of the loaded set produces identical bytes
  const std::string path2 = tmp_path("hoflow_ckpt_test2.bin");
  save_checkpoint(path2, loaded);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), {});
  std::string s2((std::istreambuf_iterator<char>(f2)), {});
  REQUIRE(s1 == s2);
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("load into model checks names and shapes") {
  Rng rng(10);
  ParamSet src;
  src.add("w", {2, 2}, {1, 2, 3, 4});
  const std::string path = tmp_path("hoflow_ckpt_test3.bin");
  save_checkpoint(path, src);

  ParamSet dst;
  dst.add_zeros("w", {2, 2});
  load_checkpoint(path, dst);
  REQUIRE(dst.find("w")->at(3) == 4.0f);

  ParamSet bad;
  bad.add_zeros("w", {4});
  REQUIRE_THROWS_WITH(load_checkpoint(path, bad),
                      Catch::Matchers::ContainsSubstring("shape mismatch"));
  ParamSet missing;
  missing.add_zeros("other", {2, 2});
  REQUIRE_THROWS_WITH(load_checkpoint(path, missing),
                      Catch::Matchers::ContainsSubstring("other"));
  std::remove(path.c_str());
}

TEST_CASE("bad magic rejected") {
  const std::string path = tmp_path("hoflow_ckpt_bad.bin");
  std::ofstream os(path, std::ios::binary);
  os << "NOPE1234";
  os.close();
  REQUIRE_THROWS_WITH(read_checkpoint(path), Catch::Matchers::ContainsSubstring("magic"));
  std::remove(path.c_str());
}
