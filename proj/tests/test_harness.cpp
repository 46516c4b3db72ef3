#include <catch2/catch_amalgamated.hpp>
#include "rico/rico.hpp"
TEST_CASE("placeholder test_harness") { CHECK(true); }
