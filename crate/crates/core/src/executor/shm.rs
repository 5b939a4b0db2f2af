// SPDX-License-Identifier: Apache-2.0

//! System V shared memory segment holding an external target's edge counters.

use std::io;
use std::ptr::NonNull;

pub struct SharedMap {
    id: libc::c_int,
    base: NonNull<u8>,
    len: usize,
}

impl SharedMap {
    pub fn create(len: usize) -> io::Result<Self> {
        // SAFETY: plain syscall wrappers; the returned id/pointer are checked below.
        unsafe {
            let id = libc::shmget(
                libc::IPC_PRIVATE,
                len,
                libc::IPC_CREAT | libc::IPC_EXCL | 0o600,
            );
            if id < 0 {
                return Err(io::Error::last_os_error());
            }
            let addr = libc::shmat(id, std::ptr::null(), 0);
            if addr as isize == -1 {
                let err = io::Error::last_os_error();
                libc::shmctl(id, libc::IPC_RMID, std::ptr::null_mut());
                return Err(err);
            }
            Ok(Self {
                id,
                base: NonNull::new_unchecked(addr as *mut u8),
                len,
            })
        }
    }

    pub fn id(&self) -> i32 {
        self.id
    }

    pub fn as_slice(&self) -> &[u8] {
        // SAFETY: the segment is attached for `len` bytes until drop.
        unsafe { std::slice::from_raw_parts(self.base.as_ptr(), self.len) }
    }

    pub fn clear(&mut self) {
        // SAFETY: as above; no child is running while the parent clears.
        unsafe { std::ptr::write_bytes(self.base.as_ptr(), 0, self.len) }
    }
}

impl Drop for SharedMap {
    fn drop(&mut self) {
        // SAFETY: detaching our own attachment and marking the segment for removal.
        unsafe {
            libc::shmdt(self.base.as_ptr() as *const libc::c_void);
            libc::shmctl(self.id, libc::IPC_RMID, std::ptr::null_mut());
        }
    }
}

// The mapping is owned exclusively by one executor.
unsafe impl Send for SharedMap {}

/// Attaches to an existing segment by id, for harness code running in the child.
pub struct AttachedMap {
    base: NonNull<u8>,
    len: usize,
}

impl AttachedMap {
    pub fn attach(id: i32, len: usize) -> io::Result<Self> {
        // SAFETY: the result of shmat is validated before use.
        unsafe {
            let addr = libc::shmat(id, std::ptr::null(), 0);
            if addr as isize == -1 {
                return Err(io::Error::last_os_error());
            }
            Ok(Self {
                base: NonNull::new_unchecked(addr as *mut u8),
                len,
            })
        }
    }

    pub fn as_mut_slice(&mut self) -> &mut [u8] {
        // SAFETY: attached for `len` bytes until drop.
        unsafe { std::slice::from_raw_parts_mut(self.base.as_ptr(), self.len) }
    }
}

impl Drop for AttachedMap {
    fn drop(&mut self) {
        // SAFETY: detaching our own attachment.
        unsafe {
            libc::shmdt(self.base.as_ptr() as *const libc::c_void);
        }
    }
}
