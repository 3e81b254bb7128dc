# Compiled kernel package; the extension module _core may be absent when the
# package was installed without a working Cython toolchain.
