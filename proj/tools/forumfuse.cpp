#include "forumfuse/cli.hpp"

int main(int argc, char** argv) { return forumfuse::cli::run(argc, argv); }
